#include "pneumo/model.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace pneumo {

void ModelConfig::validate() const {
    if (in_channels < 1 || in_height < 1 || in_width < 1) {
        throw ValueError("model config: input dimensions must be >= 1");
    }
    if (block1_filters < 1 || block1_convs < 1) {
        throw ValueError("model config: block 1 needs at least one conv layer and one filter");
    }
    if (separable_filters.empty()) {
        throw ValueError("model config: at least one separable block is required");
    }
    for (std::size_t i = 1; i < separable_filters.size(); ++i) {
        if (separable_filters[i] <= separable_filters[i - 1]) {
            throw ValueError("model config: separable filter counts must be strictly increasing");
        }
    }
    for (int f : separable_filters) {
        if (f < 1) throw ValueError("model config: filter counts must be >= 1");
    }
    if (dense_units.size() != dropout_rates.size()) {
        throw ValueError("model config: exactly one dropout rate per dense layer");
    }
    for (int u : dense_units) {
        if (u < 1) throw ValueError("model config: dense units must be >= 1");
    }
    for (float r : dropout_rates) {
        if (!(r >= 0.0f && r < 1.0f)) {
            throw ValueError("model config: dropout rates must be in [0,1)");
        }
    }
    if (!(bn_momentum >= 0.0f && bn_momentum < 1.0f)) {
        throw ValueError("model config: batch-norm momentum must be in [0,1)");
    }
    if (!(bn_epsilon > 0.0f)) {
        throw ValueError("model config: batch-norm epsilon must be > 0");
    }
    spatial_chain();  // rejects configs whose spatial size collapses below 2
}

std::vector<int> ModelConfig::spatial_chain() const {
    int h = in_height;
    std::vector<int> chain{h};
    const std::size_t n_pools = 1 + separable_filters.size();
    for (std::size_t i = 0; i < n_pools; ++i) {
        if (h < 2) {
            throw ValueError("model config: spatial size collapses below 2 before pool " +
                             std::to_string(i + 1));
        }
        h /= 2;
        chain.push_back(h);
    }
    return chain;
}

int ModelConfig::flatten_size() const {
    const int side = spatial_chain().back();
    return separable_filters.back() * side * side;
}

Model::Model(const ModelConfig& config, SeededRng& rng) : config_(config) {
    build();
    for (auto& layer : layers_) {
        if (auto* c = dynamic_cast<Conv2d<float>*>(layer.get())) c->init(rng);
        else if (auto* s = dynamic_cast<SeparableConv2d<float>*>(layer.get())) s->init(rng);
        else if (auto* d = dynamic_cast<Dense<float>*>(layer.get())) d->init(rng);
    }
}

Model::Model(const ModelConfig& config) : config_(config) {
    build();
}

void Model::build() {
    config_.validate();
    if (config_.in_height != config_.in_width) {
        throw ValueError("model config: input must be square");
    }

    auto add = [this](std::unique_ptr<Layer<float>> l) {
        for (Tensor* t : l->params()) state_.push_back(t);
        if (auto* bn = dynamic_cast<BatchNorm2d<float>*>(l.get())) {
            state_.push_back(&bn->running_mean());
            state_.push_back(&bn->running_var());
        }
        layers_.push_back(std::move(l));
    };

    int channels = config_.in_channels;
    for (int i = 0; i < config_.block1_convs; ++i) {
        add(std::make_unique<Conv2d<float>>(channels, config_.block1_filters));
        add(std::make_unique<ReLU<float>>());
        channels = config_.block1_filters;
    }
    add(std::make_unique<MaxPool2x2<float>>());

    for (int f : config_.separable_filters) {
        add(std::make_unique<SeparableConv2d<float>>(channels, f));
        add(std::make_unique<BatchNorm2d<float>>(f, config_.bn_momentum, config_.bn_epsilon));
        add(std::make_unique<ReLU<float>>());
        add(std::make_unique<MaxPool2x2<float>>());
        channels = f;
    }

    add(std::make_unique<Flatten<float>>());
    int features = config_.flatten_size();
    for (std::size_t i = 0; i < config_.dense_units.size(); ++i) {
        add(std::make_unique<Dense<float>>(features, config_.dense_units[i]));
        add(std::make_unique<ReLU<float>>());
        add(std::make_unique<Dropout<float>>(config_.dropout_rates[i]));
        features = config_.dense_units[i];
    }
    add(std::make_unique<Dense<float>>(features, 1));
    add(std::make_unique<Sigmoid<float>>());
}

Tensor Model::forward(const Tensor& batch, Mode mode, SeededRng* rng) {
    if (batch.ndim() != 4 || batch.dim(1) != config_.in_channels ||
        batch.dim(2) != config_.in_height || batch.dim(3) != config_.in_width) {
        throw ShapeError("model forward: batch shape must be (N," +
                         std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.in_height) + "," +
                         std::to_string(config_.in_width) + ")");
    }
    Tensor x = batch;
    for (auto& layer : layers_) {
        x = layer->forward(x, mode, rng);
    }
    return x;
}

float Model::predict_proba(const Tensor& image) {
    if (image.ndim() != 3) {
        throw ShapeError("predict_proba expects a single (C,H,W) image");
    }
    Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    return forward(batch, Mode::Eval)[0];
}

Tensor Model::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        g = (*it)->backward(g);
    }
    return g;
}

std::vector<Tensor*> Model::params() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_) {
        for (Tensor* t : layer->params()) out.push_back(t);
    }
    return out;
}

std::vector<Tensor*> Model::grads() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_) {
        for (Tensor* t : layer->grads()) out.push_back(t);
    }
    return out;
}

std::vector<Tensor*> Model::state_tensors() { return state_; }

namespace {

constexpr char kMagic[5] = {'P', 'N', 'E', 'U', '1'};

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void append_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_i32(std::string& buf, std::int32_t v) {
    append_u32(buf, static_cast<std::uint32_t>(v));
}

void append_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(buf, bits);
}

void append_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, std::size_t pos) : buf_(buf), pos_(pos) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw CheckpointError("truncated checkpoint");
        }
    }

    const std::string& buf_;
    std::size_t pos_;
};

void serialize_config(std::string& buf, const ModelConfig& c) {
    append_i32(buf, c.in_channels);
    append_i32(buf, c.in_height);
    append_i32(buf, c.in_width);
    append_i32(buf, c.block1_filters);
    append_i32(buf, c.block1_convs);
    append_u32(buf, static_cast<std::uint32_t>(c.separable_filters.size()));
    for (int f : c.separable_filters) append_i32(buf, f);
    append_u32(buf, static_cast<std::uint32_t>(c.dense_units.size()));
    for (int u : c.dense_units) append_i32(buf, u);
    append_u32(buf, static_cast<std::uint32_t>(c.dropout_rates.size()));
    for (float r : c.dropout_rates) append_f32(buf, r);
    append_f32(buf, c.bn_momentum);
    append_f32(buf, c.bn_epsilon);
}

ModelConfig deserialize_config(Reader& r) {
    ModelConfig c;
    c.in_channels = r.i32();
    c.in_height = r.i32();
    c.in_width = r.i32();
    c.block1_filters = r.i32();
    c.block1_convs = r.i32();
    std::uint32_t n = r.u32();
    if (n > 64) throw CheckpointError("implausible separable block count in checkpoint");
    c.separable_filters.assign(n, 0);
    for (auto& f : c.separable_filters) f = r.i32();
    n = r.u32();
    if (n > 64) throw CheckpointError("implausible dense layer count in checkpoint");
    c.dense_units.assign(n, 0);
    for (auto& u : c.dense_units) u = r.i32();
    n = r.u32();
    if (n > 64) throw CheckpointError("implausible dropout count in checkpoint");
    c.dropout_rates.assign(n, 0.0f);
    for (auto& d : c.dropout_rates) d = r.f32();
    c.bn_momentum = r.f32();
    c.bn_epsilon = r.f32();
    return c;
}

} // namespace

void Model::save(std::ostream& out) const {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    serialize_config(buf, config_);
    for (const Tensor* t : state_) {
        for (std::size_t i = 0; i < t->numel(); ++i) append_f32(buf, (*t)[i]);
    }
    append_u64(buf, fnv1a64(buf));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed to write checkpoint");
}

Model Model::load(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();

    if (buf.size() < sizeof(kMagic) + 8) {
        throw CheckpointError("truncated checkpoint");
    }
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("bad checkpoint magic");
    }
    const std::string payload = buf.substr(0, buf.size() - 8);
    Reader tail(buf, buf.size() - 8);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) {
        stored |= static_cast<std::uint64_t>(
                      static_cast<unsigned char>(buf[buf.size() - 8 + i]))
                  << (8 * i);
    }
    if (fnv1a64(payload) != stored) {
        throw CheckpointError("checkpoint checksum mismatch");
    }

    Reader r(payload, sizeof(kMagic));
    ModelConfig config;
    try {
        config = deserialize_config(r);
        config.validate();
    } catch (const ValueError& e) {
        throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
    }
    Model model(config);
    for (Tensor* t : model.state_) {
        for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = r.f32();
    }
    if (r.pos() != payload.size()) {
        throw CheckpointError("trailing bytes in checkpoint");
    }
    return model;
}

void Model::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    save(out);
}

Model Model::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    return load(in);
}

} // namespace pneumo
