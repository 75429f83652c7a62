#ifndef PNEUMO_SAMPLE_HPP
#define PNEUMO_SAMPLE_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pneumo {

// One manifest row: an image on disk plus its label and clinical metadata.
// Labels: 0 = Normal, 1 = Pneumonia.
struct SampleRecord {
    std::string image_path;
    int label = 0;
    std::optional<int> age_months;
    std::vector<std::pair<std::string, std::string>> metadata;
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::string source_path;

    std::size_t size() const { return records.size(); }
};

} // namespace pneumo

#endif
