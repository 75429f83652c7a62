#include "pneumo/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include "pneumo/errors.hpp"

namespace pneumo {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

[[noreturn]] void manifest_error(const std::string& source, int line,
                                 const std::string& what) {
    throw ParseError("manifest " + source + " line " + std::to_string(line) +
                     ": " + what);
}

int parse_manifest_label(const std::string& token, const std::string& source,
                         int line) {
    const std::string t = lower(trim(token));
    if (t == "normal" || t == "0") return 0;
    if (t == "pneumonia" || t == "1") return 1;
    manifest_error(source, line, "unknown label '" + token + "'");
}

bool parse_int_strict(const std::string& s, long& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stol(t, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == t.size();
}

} // namespace

Manifest load_manifest(std::istream& in, const std::string& source_path) {
    Manifest manifest;
    manifest.source_path = source_path;
    std::string line;
    int line_no = 0;
    std::vector<std::string> seen_paths;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;

        const auto fields = split_on(line, ',');
        if (fields.size() < 2 || fields.size() > 4)
            manifest_error(source_path, line_no,
                           "expected 2-4 comma-separated fields, got " +
                               std::to_string(fields.size()));

        SampleRecord rec;
        rec.image_path = trim(fields[0]);
        if (rec.image_path.empty())
            manifest_error(source_path, line_no, "empty image path");
        if (std::find(seen_paths.begin(), seen_paths.end(), rec.image_path) !=
            seen_paths.end())
            manifest_error(source_path, line_no,
                           "duplicate image path '" + rec.image_path + "'");
        seen_paths.push_back(rec.image_path);

        rec.label = parse_manifest_label(fields[1], source_path, line_no);

        if (fields.size() >= 3 && !trim(fields[2]).empty()) {
            long age = 0;
            if (!parse_int_strict(fields[2], age))
                manifest_error(source_path, line_no,
                               "age is not an integer: '" + fields[2] + "'");
            if (age < 0)
                manifest_error(source_path, line_no, "negative age");
            rec.age_months = static_cast<int>(age);
        }

        if (fields.size() == 4 && !trim(fields[3]).empty()) {
            for (const std::string& item : split_on(fields[3], ';')) {
                const std::string entry = trim(item);
                if (entry.empty()) continue;
                const auto eq = entry.find('=');
                if (eq == std::string::npos || eq == 0)
                    manifest_error(source_path, line_no,
                                   "metadata entry is not key=value: '" + entry +
                                       "'");
                rec.metadata.emplace_back(trim(entry.substr(0, eq)),
                                          trim(entry.substr(eq + 1)));
            }
        }

        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

Manifest load_manifest_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path);
    return load_manifest(in, path);
}

void write_manifest_file(const Manifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    for (const SampleRecord& rec : manifest.records) {
        out << rec.image_path << ',' << (rec.label == 1 ? "PNEUMONIA" : "NORMAL")
            << ',';
        if (rec.age_months) out << *rec.age_months;
        out << ',';
        for (std::size_t i = 0; i < rec.metadata.size(); ++i) {
            if (i) out << ';';
            out << rec.metadata[i].first << '=' << rec.metadata[i].second;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing manifest " + path);
}

std::string resolve_image_path(const std::string& manifest_source,
                               const std::string& image_path) {
    namespace fs = std::filesystem;
    fs::path p(image_path);
    if (p.is_absolute() || manifest_source.empty()) return image_path;
    return (fs::path(manifest_source).parent_path() / p).string();
}

// --------------------------------------------------------------------------
// PNM codec
// --------------------------------------------------------------------------

namespace {

// Read the next whitespace-separated header token, skipping '#' comments.
std::string next_pnm_token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    std::size_t start = pos;
    while (pos < bytes.size() &&
           !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
           bytes[pos] != '#')
        ++pos;
    if (start == pos) throw DataError("truncated image header");
    return bytes.substr(start, pos - start);
}

int parse_pnm_number(const std::string& bytes, std::size_t& pos,
                     const char* what) {
    const std::string tok = next_pnm_token(bytes, pos);
    long value = 0;
    if (!parse_int_strict(tok, value) || value <= 0)
        throw DataError(std::string("bad image ") + what + " '" + tok + "'");
    return static_cast<int>(value);
}

} // namespace

Tensor decode_pnm(const std::string& bytes) {
    if (bytes.size() < 2) throw DataError("image too short for magic");
    const std::string magic = bytes.substr(0, 2);
    int channels = 0;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw DataError("unsupported image magic '" + magic + "'");

    std::size_t pos = 2;
    const int width = parse_pnm_number(bytes, pos, "width");
    const int height = parse_pnm_number(bytes, pos, "height");
    const int maxval = parse_pnm_number(bytes, pos, "maxval");
    if (maxval != 255)
        throw DataError("unsupported image maxval " + std::to_string(maxval));
    if (pos >= bytes.size() ||
        !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw DataError("missing whitespace after image header");
    ++pos; // exactly one whitespace byte separates header from payload

    const std::size_t need =
        static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
        static_cast<std::size_t>(channels);
    if (bytes.size() - pos < need) throw DataError("truncated image payload");

    Tensor img({channels, height, width});
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                const unsigned char v = static_cast<unsigned char>(
                    bytes[pos + (static_cast<std::size_t>(y) * width + x) *
                                    channels +
                          c]);
                img.at(c, y, x) = static_cast<float>(v);
            }
        }
    }
    return img;
}

Tensor decode_pnm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_pnm(buf.str());
}

std::string encode_pnm(const Tensor& image) {
    if (image.ndim() != 3)
        throw ShapeError("image must be [channels, height, width]");
    const int channels = image.shape()[0];
    const int height = image.shape()[1];
    const int width = image.shape()[2];
    if (channels != 1 && channels != 3)
        throw ShapeError("image must have 1 or 3 channels");

    std::string out = channels == 1 ? "P5" : "P6";
    out += "\n" + std::to_string(width) + " " + std::to_string(height) +
           "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(channels) * height * width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                float v = std::round(image.at(c, y, x));
                if (v < 0.0f || v > 255.0f)
                    throw ValueError("pixel out of 0..255 range");
                out += static_cast<char>(static_cast<unsigned char>(v));
            }
        }
    }
    return out;
}

void write_pnm_file(const Tensor& image, const std::string& path) {
    const std::string bytes = encode_pnm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing image " + path);
}

// --------------------------------------------------------------------------
// Preprocessing
// --------------------------------------------------------------------------

namespace {

// Bilinear lookup with zero fill for coordinates outside the source frame.
double sample_zero_fill(const Tensor& img, int c, double sy, double sx) {
    const int h = img.shape()[1];
    const int w = img.shape()[2];
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double fy = sy - y0;
    const double fx = sx - x0;
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy;
            const int xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
            acc += wgt * img.at(c, yy, xx);
        }
    }
    return acc;
}

} // namespace

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.ndim() != 3)
        throw ShapeError("resize expects [channels, height, width]");
    if (out_h < 1 || out_w < 1) throw ValueError("resize target must be >= 1");
    const int channels = image.shape()[0];
    const int in_h = image.shape()[1];
    const int in_w = image.shape()[2];
    if (in_h == out_h && in_w == out_w) return image;

    Tensor out({channels, out_h, out_w});
    const double scale_y = static_cast<double>(in_h) / out_h;
    const double scale_x = static_cast<double>(in_w) / out_w;
    for (int c = 0; c < channels; ++c) {
        for (int oy = 0; oy < out_h; ++oy) {
            double sy = (oy + 0.5) * scale_y - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(in_h - 1));
            const int y0 = std::min(static_cast<int>(std::floor(sy)), in_h - 1);
            const int y1 = std::min(y0 + 1, in_h - 1);
            const double fy = sy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
                double sx = (ox + 0.5) * scale_x - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(in_w - 1));
                const int x0 =
                    std::min(static_cast<int>(std::floor(sx)), in_w - 1);
                const int x1 = std::min(x0 + 1, in_w - 1);
                const double fx = sx - x0;
                const double top = (1.0 - fx) * image.at(c, y0, x0) +
                                   fx * image.at(c, y0, x1);
                const double bot = (1.0 - fx) * image.at(c, y1, x0) +
                                   fx * image.at(c, y1, x1);
                out.at(c, oy, ox) =
                    static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Tensor normalize_image(const Tensor& image) {
    if (image.ndim() != 3)
        throw ShapeError("normalize expects [channels, height, width]");
    Tensor out(image.shape());
    for (std::size_t i = 0; i < image.numel(); ++i) {
        const float v = image.data()[i];
        if (v < 0.0f || v > 255.0f)
            throw ValueError("pixel out of 0..255 range before normalize");
        out.data()[i] = v / 255.0f;
    }
    return out;
}

Tensor replicate_to_rgb(const Tensor& image) {
    if (image.ndim() != 3)
        throw ShapeError("replicate expects [channels, height, width]");
    const int channels = image.shape()[0];
    if (channels == 3) return image;
    if (channels != 1)
        throw ShapeError("replicate expects 1 or 3 channels");
    const int h = image.shape()[1];
    const int w = image.shape()[2];
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(0, y, x);
    return out;
}

Tensor load_and_preprocess(const std::string& image_file, int out_h, int out_w) {
    Tensor img = decode_pnm_file(image_file);
    img = replicate_to_rgb(img);
    img = resize_bilinear(img, out_h, out_w);
    return normalize_image(img);
}

// --------------------------------------------------------------------------
// Augmentation
// --------------------------------------------------------------------------

void AugmentConfig::validate() const {
    if (!(rotation_max_degrees >= 0.0f) || rotation_max_degrees > 180.0f)
        throw ValueError("rotation_max_degrees must be in [0, 180]");
    if (!(flip_prob >= 0.0f) || flip_prob > 1.0f)
        throw ValueError("flip_prob must be in [0, 1]");
}

Tensor flip_horizontal(const Tensor& image) {
    if (image.ndim() != 3)
        throw ShapeError("flip expects [channels, height, width]");
    const int channels = image.shape()[0];
    const int h = image.shape()[1];
    const int w = image.shape()[2];
    Tensor out(image.shape());
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = image.at(c, y, w - 1 - x);
    return out;
}

Tensor rotate_bilinear(const Tensor& image, double degrees) {
    if (image.ndim() != 3)
        throw ShapeError("rotate expects [channels, height, width]");
    if (degrees == 0.0) return image;
    const int channels = image.shape()[0];
    const int h = image.shape()[1];
    const int w = image.shape()[2];
    const double rad = degrees * std::acos(-1.0) / 180.0;
    // Snap cos/sin to exact values at quarter turns: cos(90 deg) computed in
    // radians lands ~6e-17 off zero, which would smear pixels that should map
    // one-to-one.
    const auto snap = [](double x) {
        for (double exact : {-1.0, 0.0, 1.0})
            if (std::abs(x - exact) < 1e-12) return exact;
        return x;
    };
    const double cs = snap(std::cos(rad));
    const double sn = snap(std::sin(rad));
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;
    Tensor out(image.shape());
    for (int c = 0; c < channels; ++c) {
        for (int oy = 0; oy < h; ++oy) {
            for (int ox = 0; ox < w; ++ox) {
                // Inverse mapping: rotate the output coordinate backwards to
                // find where it came from in the source frame.
                const double u = ox - cx;
                const double v = oy - cy;
                const double sx = cs * u + sn * v + cx;
                const double sy = -sn * u + cs * v + cy;
                out.at(c, oy, ox) =
                    static_cast<float>(sample_zero_fill(image, c, sy, sx));
            }
        }
    }
    return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, SeededRng& rng) {
    cfg.validate();
    // Always consume exactly two draws so downstream streams are independent
    // of the configured probabilities.
    const float flip_u = rng.uniform();
    const float angle_u = rng.uniform();
    Tensor out = image;
    if (cfg.flip_prob > 0.0f && flip_u < cfg.flip_prob)
        out = flip_horizontal(out);
    if (cfg.rotation_max_degrees > 0.0f) {
        const double degrees =
            (2.0 * angle_u - 1.0) * static_cast<double>(cfg.rotation_max_degrees);
        out = rotate_bilinear(out, degrees);
    }
    return out;
}

// --------------------------------------------------------------------------
// Stratified split
// --------------------------------------------------------------------------

void SplitRatios::validate() const {
    if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0))
        throw ValueError("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9)
        throw ValueError("split ratios must sum to 1");
}

namespace {

// Largest-remainder allocation of n items over the three ratios. Every split
// receives at least floor(n * ratio); leftover items go to the splits with
// the largest fractional parts (ties broken by split order).
std::array<std::size_t, 3> allocate_counts(std::size_t n,
                                           const SplitRatios& ratios) {
    const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * r[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

} // namespace

SplitManifests split_dataset(const Manifest& manifest, const SplitRatios& ratios,
                             std::uint64_t seed) {
    ratios.validate();
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        by_class[manifest.records[i].label].push_back(i);
    for (int label = 0; label < 2; ++label)
        if (by_class[label].size() < 3)
            throw DataError("need at least 3 records of label " +
                            std::to_string(label) + ", got " +
                            std::to_string(by_class[label].size()));

    SplitManifests out;
    out.train.source_path = manifest.source_path;
    out.val.source_path = manifest.source_path;
    out.test.source_path = manifest.source_path;
    for (int label = 0; label < 2; ++label) {
        auto& idx = by_class[label];
        SeededRng rng(seed, 100 + static_cast<std::uint64_t>(label));
        rng.shuffle(idx);
        const auto counts = allocate_counts(idx.size(), ratios);
        std::size_t pos = 0;
        Manifest* dests[3] = {&out.train, &out.val, &out.test};
        for (int part = 0; part < 3; ++part)
            for (std::size_t k = 0; k < counts[part]; ++k, ++pos)
                dests[part]->records.push_back(manifest.records[idx[pos]]);
    }
    return out;
}

Dataset load_dataset(const Manifest& manifest, const AugmentConfig* aug,
                     std::uint64_t seed, int out_h, int out_w) {
    Dataset ds;
    ds.images.reserve(manifest.records.size());
    ds.labels.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const SampleRecord& rec = manifest.records[i];
        const std::string file =
            resolve_image_path(manifest.source_path, rec.image_path);
        Tensor img = load_and_preprocess(file, out_h, out_w);
        if (aug != nullptr) {
            SeededRng rng(seed, kAugmentStreamBase + i);
            img = augment(img, *aug, rng);
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(rec.label);
    }
    return ds;
}

// --------------------------------------------------------------------------
// Synthetic data
// --------------------------------------------------------------------------

namespace {

constexpr int kSynthSide = 150;

struct Ellipse {
    double cy, cx, ry, rx;
    double level;
};

// Smooth-edged ellipse: full level inside 90% of the radius, linear ramp to
// the boundary, zero outside.
double ellipse_weight(const Ellipse& e, int y, int x) {
    const double dy = (y - e.cy) / e.ry;
    const double dx = (x - e.cx) / e.rx;
    const double d = std::sqrt(dy * dy + dx * dx);
    if (d >= 1.0) return 0.0;
    if (d <= 0.9) return 1.0;
    return (1.0 - d) / 0.1;
}

Tensor synth_base_image(SeededRng& rng) {
    const double bg = 14.0 + rng.uniform() * 8.0;
    Ellipse lungs[2];
    for (int side = 0; side < 2; ++side) {
        const double off = side == 0 ? -1.0 : 1.0;
        lungs[side].cy = 74.5 + (rng.uniform() - 0.5f) * 8.0;
        lungs[side].cx = 74.5 + off * (26.0 + rng.uniform() * 6.0);
        lungs[side].ry = 36.0 + rng.uniform() * 6.0;
        lungs[side].rx = 17.0 + rng.uniform() * 5.0;
        lungs[side].level = 88.0 + rng.uniform() * 18.0;
    }
    Tensor img({1, kSynthSide, kSynthSide}, static_cast<float>(bg));
    for (int y = 0; y < kSynthSide; ++y) {
        for (int x = 0; x < kSynthSide; ++x) {
            double v = bg;
            for (const Ellipse& e : lungs)
                v = std::max(v, bg + (e.level - bg) * ellipse_weight(e, y, x));
            img.at(0, y, x) = static_cast<float>(v);
        }
    }
    return img;
}

// Overlay bright blotches inside the lung fields. Strictly additive before
// clamping, so the result's mean intensity exceeds the base image's.
Tensor synth_add_blotches(const Tensor& base, SeededRng& rng) {
    Tensor img = base;
    const int n_blotches = 3 + static_cast<int>(rng.bounded(4));
    for (int b = 0; b < n_blotches; ++b) {
        const double off = rng.bounded(2) == 0 ? -1.0 : 1.0;
        Ellipse blob;
        blob.cy = 50.0 + rng.uniform() * 50.0;
        blob.cx = 74.5 + off * (18.0 + rng.uniform() * 16.0);
        blob.ry = 5.0 + rng.uniform() * 6.0;
        blob.rx = 5.0 + rng.uniform() * 6.0;
        blob.level = 55.0 + rng.uniform() * 25.0;
        for (int y = 0; y < kSynthSide; ++y) {
            for (int x = 0; x < kSynthSide; ++x) {
                const double add = blob.level * ellipse_weight(blob, y, x);
                if (add > 0.0) {
                    const float v = img.at(0, y, x) + static_cast<float>(add);
                    img.at(0, y, x) = std::min(v, 255.0f);
                }
            }
        }
    }
    return img;
}

std::string synth_name(int label, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d.ppm",
                  label == 1 ? "pneumonia" : "normal", index);
    return buf;
}

} // namespace

Manifest synth_dataset(int n_per_class, std::uint64_t seed,
                       const std::string& out_dir) {
    if (n_per_class < 1) throw ValueError("n_per_class must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir);

    Manifest manifest;
    manifest.source_path = (fs::path(out_dir) / "manifest.csv").string();
    for (int i = 0; i < n_per_class; ++i) {
        SeededRng base_rng(seed, (2u << 20) + static_cast<std::uint64_t>(i));
        SeededRng blotch_rng(seed, (3u << 20) + static_cast<std::uint64_t>(i));
        const Tensor base = synth_base_image(base_rng);
        const Tensor sick = synth_add_blotches(base, blotch_rng);
        for (int label = 0; label < 2; ++label) {
            const Tensor& gray = label == 0 ? base : sick;
            const std::string name = synth_name(label, i);
            write_pnm_file(replicate_to_rgb(gray),
                           (fs::path(out_dir) / name).string());
            SampleRecord rec;
            rec.image_path = name;
            rec.label = label;
            rec.age_months = 12 + static_cast<int>(base_rng.bounded(49));
            const char* flag = label == 1 ? "1" : "0";
            rec.metadata = {{"cough", flag}, {"fever", flag}};
            manifest.records.push_back(std::move(rec));
        }
    }
    write_manifest_file(manifest, manifest.source_path);
    return manifest;
}

} // namespace pneumo
