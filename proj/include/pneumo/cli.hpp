#ifndef PNEUMO_CLI_HPP
#define PNEUMO_CLI_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pneumo/data.hpp"
#include "pneumo/train.hpp"

namespace pneumo {

// Everything a command run needs. Populated from defaults, then an optional
// key=value config file, then command-line flags (flags win).
struct RunConfig {
    TrainConfig train;
    AugmentConfig augment;
    SplitRatios split;
    std::string manifest;
    std::string ontology;
    std::string checkpoint;
    std::string out_dir;
    double threshold = 0.5;        // classification threshold (evaluate/metrics)
    double fusion_threshold = 0.7; // probability gate for decision fusion
};

// Apply one config entry; unknown keys and malformed values raise ValueError.
void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value);

// Defaults overlaid with the entries of a key=value file ('#' comments allowed).
RunConfig load_run_config(const std::string& path);

// Subcommand bodies. Each throws pneumo::Error subclasses on failure and
// prints line-oriented `key value` reports to stdout.
void cmd_train(const RunConfig& cfg);
void cmd_evaluate(const RunConfig& cfg);
void cmd_diagnose(const RunConfig& cfg, const std::string& image_path,
                  std::optional<int> age_months,
                  const std::vector<std::string>& metadata);
void cmd_metrics(const std::string& predictions_path, double threshold);
void cmd_synth(int n_per_class, std::uint64_t seed, const std::string& out_dir);

// Full argument parser + dispatcher. Returns the process exit code:
// 0 success, 2 usage or data errors, 3 corrupt checkpoint, 4 I/O errors.
int run_cli(int argc, const char* const* argv);

} // namespace pneumo

#endif
