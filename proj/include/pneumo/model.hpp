#ifndef PNEUMO_MODEL_HPP
#define PNEUMO_MODEL_HPP

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "pneumo/layers.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

// Declarative description of the network: block 1 is plain convolutions, the
// following blocks are separable convolutions with batch-norm, then a dense
// head with per-layer dropout and a single sigmoid output unit.
struct ModelConfig {
    int in_channels = 3;
    int in_height = 150;
    int in_width = 150;
    int block1_filters = 16;
    int block1_convs = 2;
    std::vector<int> separable_filters{32, 64, 128, 256};
    std::vector<int> dense_units{512, 128, 64};
    std::vector<float> dropout_rates{0.7f, 0.5f, 0.3f};
    float bn_momentum = 0.9f;
    float bn_epsilon = 1e-5f;

    void validate() const;

    // Spatial sizes at the input and after each pooling stage
    // (floor semantics); [150, 75, 37, 18, 9, 4] for the default config.
    std::vector<int> spatial_chain() const;

    // Flattened feature width entering the dense head; 4096 by default.
    int flatten_size() const;

    bool operator==(const ModelConfig&) const = default;
};

class Model {
public:
    // Builds the layer stack and He-initializes all weights from rng.
    Model(const ModelConfig& config, SeededRng& rng);

    // Builds the layer stack with zero weights (used when loading).
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    // Whole-model forward; outputs one probability per batch row.
    // Train mode consumes rng (dropout) and updates batch-norm running
    // statistics, so it is single-owner; Eval mode touches no state.
    Tensor forward(const Tensor& batch, Mode mode, SeededRng* rng = nullptr);

    // Eval-mode forward on a batch of one; returns the scalar probability.
    float predict_proba(const Tensor& image);

    // Backpropagates d(loss)/d(output) through the stack, filling grads().
    Tensor backward(const Tensor& grad_out);

    std::vector<Tensor*> params();
    std::vector<Tensor*> grads();

    // Parameter and state tensors in build order, including batch-norm
    // running statistics; this is the checkpoint payload order.
    std::vector<Tensor*> state_tensors();

    void save(std::ostream& out) const;
    static Model load(std::istream& in);
    void save_file(const std::string& path) const;
    static Model load_file(const std::string& path);

private:
    void build();

    ModelConfig config_;
    std::vector<std::unique_ptr<Layer<float>>> layers_;
    std::vector<Tensor*> state_;
};

} // namespace pneumo

#endif
