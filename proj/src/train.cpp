#include "pneumo/train.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace pneumo {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValueError("train config: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValueError("train config: betas must be in [0,1)");
    }
    if (!(eps > 0.0)) throw ValueError("train config: eps must be > 0");
    if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
    if (max_epochs < 0) throw ValueError("train config: max_epochs must be >= 0");
    if (!(plateau.factor > 0.0 && plateau.factor < 1.0)) {
        throw ValueError("train config: plateau factor must be in (0,1)");
    }
    if (plateau.patience < 1 || early_stop.patience < 1) {
        throw ValueError("train config: callback patience must be >= 1");
    }
    if (plateau.min_delta < 0.0 || early_stop.min_delta < 0.0) {
        throw ValueError("train config: min_delta must be >= 0");
    }
    if (!(plateau.min_lr > 0.0)) throw ValueError("train config: min_lr must be > 0");
}

namespace {

Tensor gather_batch(const Dataset& data, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t count) {
    const Tensor& first = data.images[order[begin]];
    Tensor batch({static_cast<int>(count), first.dim(0), first.dim(1), first.dim(2)}, 0.0f);
    const std::size_t per = first.numel();
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor& img = data.images[order[begin + i]];
        if (img.numel() != per) throw ShapeError("dataset images have inconsistent shapes");
        std::copy(img.data(), img.data() + per, batch.data() + i * per);
    }
    return batch;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<std::size_t>& order,
                               std::size_t begin, std::size_t count) {
    std::vector<int> y(count);
    for (std::size_t i = 0; i < count; ++i) y[i] = data.labels[order[begin + i]];
    return y;
}

int correct_count(const Tensor& p, const std::vector<int>& y) {
    int correct = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const int pred = p[i] >= 0.5f ? 1 : 0;
        if (pred == y[i]) ++correct;
    }
    return correct;
}

} // namespace

std::pair<double, double> evaluate(Model& model, const Dataset& data, int batch_size) {
    if (data.size() == 0) throw DataError("evaluate: empty dataset");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, data.size() - begin);
        Tensor x = gather_batch(data, order, begin, count);
        std::vector<int> y = gather_labels(data, order, begin, count);
        Tensor p = model.forward(x, Mode::Eval);
        auto [loss, grad] = bce_loss(p, y);
        loss_sum += loss * static_cast<double>(count);
        correct += correct_count(p, y);
    }
    return {loss_sum / static_cast<double>(data.size()),
            static_cast<double>(correct) / static_cast<double>(data.size())};
}

std::vector<EpochLog> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                            const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) {
        throw DataError("train: datasets must be non-empty");
    }
    if (train_set.images.size() != train_set.labels.size() ||
        val_set.images.size() != val_set.labels.size()) {
        throw DataError("train: image/label counts differ");
    }

    SeededRng rng(cfg.seed);
    AdamOptimizer<float> adam(model.params(), cfg);
    ReduceLROnPlateau plateau(cfg.plateau, cfg.learning_rate);
    EarlyStopping stopper(cfg.early_stop);

    std::vector<EpochLog> logs;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t begin = 0; begin < train_set.size(); begin += cfg.batch_size) {
            const std::size_t count =
                std::min<std::size_t>(cfg.batch_size, train_set.size() - begin);
            Tensor x = gather_batch(train_set, order, begin, count);
            std::vector<int> y = gather_labels(train_set, order, begin, count);

            Tensor p = model.forward(x, Mode::Train, &rng);
            auto [loss, dloss_dp] = bce_loss(p, y);
            model.backward(dloss_dp);
            adam.step(model.grads());

            loss_sum += loss * static_cast<double>(count);
            correct += correct_count(p, y);
        }

        auto [val_loss, val_acc] = evaluate(model, val_set, cfg.batch_size);

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(train_set.size());
        log.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
        log.val_loss = val_loss;
        log.val_accuracy = val_acc;
        log.learning_rate = adam.learning_rate();
        logs.push_back(log);

        adam.set_learning_rate(plateau.update(val_loss));
        if (stopper.update(val_loss)) break;
    }
    return logs;
}

} // namespace pneumo
