#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridlight/rng.hpp"

namespace gridlight {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Small dense feed-forward network: rectified-linear hidden layers, identity
// output, exact backpropagation, Adam updates. Everything is double
// precision so the finite-difference checks are meaningful.
class Mlp {
public:
    Mlp() = default;

    static Mlp init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
        if (layer_sizes.size() < 2)
            throw std::invalid_argument("mlp_init: need at least 2 layers");
        for (int s : layer_sizes)
            if (s < 1) throw std::invalid_argument("mlp_init: zero-width layer");
        Mlp mlp;
        mlp.sizes_ = layer_sizes;
        Rng rng(seed);
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
            const int fan_in = layer_sizes[l];
            const int fan_out = layer_sizes[l + 1];
            const double limit = std::sqrt(1.0 / fan_in);
            std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
            for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * limit;
            mlp.w_.push_back(std::move(w));
            mlp.b_.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
        }
        return mlp;
    }

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    const std::vector<int>& layer_sizes() const { return sizes_; }

    long long param_count() const {
        long long n = 0;
        for (std::size_t l = 0; l < w_.size(); ++l)
            n += static_cast<long long>(w_[l].size()) + static_cast<long long>(b_[l].size());
        return n;
    }

    // Parameter access (target-network sync, checkpoints, gradient checks).
    std::vector<std::vector<double>>& weights() { return w_; }
    std::vector<std::vector<double>>& biases() { return b_; }
    const std::vector<std::vector<double>>& weights() const { return w_; }
    const std::vector<std::vector<double>>& biases() const { return b_; }

    void copy_params_from(const Mlp& other) {
        if (other.sizes_ != sizes_)
            throw std::invalid_argument("copy_params_from: layer shapes differ");
        w_ = other.w_;
        b_ = other.b_;
    }

    std::vector<double> forward(std::span<const double> input) const {
        check_input(input.size());
        std::vector<double> act(input.begin(), input.end());
        std::vector<double> next;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            affine(l, act, next);
            if (l + 1 < w_.size())
                for (double& x : next) x = x > 0.0 ? x : 0.0;
            act.swap(next);
        }
        return act;
    }

    struct Gradients {
        std::vector<std::vector<double>> w, b;
    };

    // Mean squared error over the batch, summed over output components:
    // L = (1/n) sum_i sum_k (out_ik - target_ik)^2.
    double batch_loss_mse(const std::vector<std::vector<double>>& inputs,
                          const std::vector<std::vector<double>>& targets) const {
        check_batch(inputs, targets.size());
        double loss = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (static_cast<int>(targets[i].size()) != output_dim())
                throw std::invalid_argument("batch_loss_mse: target width mismatch");
            const auto out = forward(inputs[i]);
            for (int k = 0; k < output_dim(); ++k) {
                const double d = out[static_cast<std::size_t>(k)] - targets[i][static_cast<std::size_t>(k)];
                loss += d * d;
            }
        }
        return loss / static_cast<double>(inputs.size());
    }

    // Q-style loss: only the selected output index of each sample regresses
    // toward its scalar target. L = (1/n) sum_i (out_i[a_i] - y_i)^2.
    double batch_loss_indexed(const std::vector<std::vector<double>>& inputs,
                              const std::vector<int>& indices,
                              const std::vector<double>& targets) const {
        check_batch(inputs, indices.size());
        if (indices.size() != targets.size())
            throw std::invalid_argument("batch_loss_indexed: indices/targets size mismatch");
        double loss = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto out = forward(inputs[i]);
            const int a = indices[i];
            if (a < 0 || a >= output_dim())
                throw std::invalid_argument("batch_loss_indexed: index out of range");
            const double d = out[static_cast<std::size_t>(a)] - targets[i];
            loss += d * d;
        }
        return loss / static_cast<double>(inputs.size());
    }

    Gradients gradients_mse(const std::vector<std::vector<double>>& inputs,
                            const std::vector<std::vector<double>>& targets,
                            double* loss_out = nullptr) const {
        return backprop(inputs, &targets, nullptr, nullptr, loss_out);
    }

    Gradients gradients_indexed(const std::vector<std::vector<double>>& inputs,
                                const std::vector<int>& indices,
                                const std::vector<double>& targets,
                                double* loss_out = nullptr) const {
        return backprop(inputs, nullptr, &indices, &targets, loss_out);
    }

    double train_step_mse(const std::vector<std::vector<double>>& inputs,
                          const std::vector<std::vector<double>>& targets,
                          const AdamConfig& opt) {
        double loss = 0.0;
        Gradients g = gradients_mse(inputs, targets, &loss);
        adam_update(g, opt);
        return loss;
    }

    double train_step_indexed(const std::vector<std::vector<double>>& inputs,
                              const std::vector<int>& indices,
                              const std::vector<double>& targets, const AdamConfig& opt) {
        double loss = 0.0;
        Gradients g = gradients_indexed(inputs, indices, targets, &loss);
        adam_update(g, opt);
        return loss;
    }

    void save(std::ostream& os) const {
        os << "gridlight-mlp v1\n";
        os << sizes_.size();
        for (int s : sizes_) os << " " << s;
        os << "\n" << std::setprecision(17);
        for (std::size_t l = 0; l < w_.size(); ++l) {
            for (double x : w_[l]) os << x << " ";
            os << "\n";
            for (double x : b_[l]) os << x << " ";
            os << "\n";
        }
    }

    static Mlp load(std::istream& is) {
        std::string header;
        std::getline(is, header);
        if (header != "gridlight-mlp v1")
            throw std::runtime_error("mlp checkpoint: unsupported header '" + header + "'");
        std::size_t n = 0;
        is >> n;
        if (!is || n < 2) throw std::runtime_error("mlp checkpoint: bad layer count");
        Mlp mlp;
        mlp.sizes_.resize(n);
        for (std::size_t i = 0; i < n; ++i) is >> mlp.sizes_[i];
        for (std::size_t l = 0; l + 1 < n; ++l) {
            std::vector<double> w(static_cast<std::size_t>(mlp.sizes_[l]) * mlp.sizes_[l + 1]);
            std::vector<double> b(static_cast<std::size_t>(mlp.sizes_[l + 1]));
            for (double& x : w) is >> x;
            for (double& x : b) is >> x;
            mlp.w_.push_back(std::move(w));
            mlp.b_.push_back(std::move(b));
        }
        if (!is) throw std::runtime_error("mlp checkpoint: truncated parameter data");
        return mlp;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path);
        save(os);
    }

    static Mlp load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot read checkpoint " + path);
        return load(is);
    }

private:
    void check_input(std::size_t n) const {
        if (sizes_.empty()) throw std::logic_error("mlp not initialized");
        if (static_cast<int>(n) != input_dim())
            throw std::invalid_argument("mlp: input dimension " + std::to_string(n) +
                                        " != expected " + std::to_string(input_dim()));
    }
    void check_batch(const std::vector<std::vector<double>>& inputs, std::size_t other) const {
        if (inputs.empty()) throw std::invalid_argument("mlp: empty batch");
        if (inputs.size() != other)
            throw std::invalid_argument("mlp: batch size mismatch");
        for (const auto& in : inputs) check_input(in.size());
    }

    void affine(std::size_t l, const std::vector<double>& in, std::vector<double>& out) const {
        const int rows = sizes_[l + 1];
        const int cols = sizes_[l];
        out.assign(static_cast<std::size_t>(rows), 0.0);
        const double* w = w_[l].data();
        for (int r = 0; r < rows; ++r) {
            double acc = b_[l][static_cast<std::size_t>(r)];
            const double* wr = w + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) acc += wr[c] * in[static_cast<std::size_t>(c)];
            out[static_cast<std::size_t>(r)] = acc;
        }
    }

    Gradients backprop(const std::vector<std::vector<double>>& inputs,
                       const std::vector<std::vector<double>>* mse_targets,
                       const std::vector<int>* indices, const std::vector<double>* scalar_targets,
                       double* loss_out) const {
        const std::size_t batch =
            mse_targets ? mse_targets->size() : indices->size();
        check_batch(inputs, batch);
        if (!mse_targets && indices->size() != scalar_targets->size())
            throw std::invalid_argument("mlp: indices/targets size mismatch");

        Gradients g;
        g.w.resize(w_.size());
        g.b.resize(b_.size());
        for (std::size_t l = 0; l < w_.size(); ++l) {
            g.w[l].assign(w_[l].size(), 0.0);
            g.b[l].assign(b_[l].size(), 0.0);
        }

        const double inv_n = 1.0 / static_cast<double>(inputs.size());
        double loss = 0.0;
        const std::size_t layers = w_.size();
        std::vector<std::vector<double>> act(layers + 1);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            act[0].assign(inputs[i].begin(), inputs[i].end());
            for (std::size_t l = 0; l < layers; ++l) {
                affine(l, act[l], act[l + 1]);
                if (l + 1 < layers)
                    for (double& x : act[l + 1]) x = x > 0.0 ? x : 0.0;
            }
            // dL/d(output)
            std::vector<double> delta(act[layers].size(), 0.0);
            if (mse_targets) {
                const auto& t = (*mse_targets)[i];
                if (static_cast<int>(t.size()) != output_dim())
                    throw std::invalid_argument("mlp: target width mismatch");
                for (std::size_t k = 0; k < delta.size(); ++k) {
                    const double d = act[layers][k] - t[k];
                    loss += d * d * inv_n;
                    delta[k] = 2.0 * d * inv_n;
                }
            } else {
                const int a = (*indices)[i];
                if (a < 0 || a >= output_dim())
                    throw std::invalid_argument("mlp: action index out of range");
                const double d = act[layers][static_cast<std::size_t>(a)] - (*scalar_targets)[i];
                loss += d * d * inv_n;
                delta[static_cast<std::size_t>(a)] = 2.0 * d * inv_n;
            }
            // Walk layers backwards accumulating parameter gradients.
            for (std::size_t l = layers; l-- > 0;) {
                const int rows = sizes_[l + 1];
                const int cols = sizes_[l];
                double* gw = g.w[l].data();
                for (int r = 0; r < rows; ++r) {
                    const double dr = delta[static_cast<std::size_t>(r)];
                    if (dr == 0.0) continue;
                    g.b[l][static_cast<std::size_t>(r)] += dr;
                    double* gwr = gw + static_cast<std::size_t>(r) * cols;
                    for (int c = 0; c < cols; ++c) gwr[c] += dr * act[l][static_cast<std::size_t>(c)];
                }
                if (l == 0) break;
                std::vector<double> prev(static_cast<std::size_t>(cols), 0.0);
                const double* w = w_[l].data();
                for (int r = 0; r < rows; ++r) {
                    const double dr = delta[static_cast<std::size_t>(r)];
                    if (dr == 0.0) continue;
                    const double* wr = w + static_cast<std::size_t>(r) * cols;
                    for (int c = 0; c < cols; ++c) prev[static_cast<std::size_t>(c)] += dr * wr[c];
                }
                // Rectifier gate: activations of layer l that were clamped to
                // zero pass no gradient.
                for (int c = 0; c < cols; ++c)
                    if (act[l][static_cast<std::size_t>(c)] <= 0.0) prev[static_cast<std::size_t>(c)] = 0.0;
                delta.swap(prev);
            }
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("mlp: non-finite training loss (divergence)");
        if (loss_out) *loss_out = loss;
        return g;
    }

    void adam_update(const Gradients& g, const AdamConfig& opt) {
        if (m_.empty()) {
            m_.resize(w_.size());
            v_.resize(w_.size());
            mb_.resize(b_.size());
            vb_.resize(b_.size());
            for (std::size_t l = 0; l < w_.size(); ++l) {
                m_[l].assign(w_[l].size(), 0.0);
                v_[l].assign(w_[l].size(), 0.0);
                mb_[l].assign(b_[l].size(), 0.0);
                vb_[l].assign(b_[l].size(), 0.0);
            }
        }
        ++adam_t_;
        const double bc1 = 1.0 - std::pow(opt.beta1, adam_t_);
        const double bc2 = 1.0 - std::pow(opt.beta2, adam_t_);
        auto apply = [&](std::vector<double>& p, const std::vector<double>& grad,
                         std::vector<double>& m, std::vector<double>& v) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = grad[i];
                if (!std::isfinite(gi))
                    throw std::runtime_error("mlp: non-finite gradient (divergence)");
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
            }
        };
        for (std::size_t l = 0; l < w_.size(); ++l) {
            apply(w_[l], g.w[l], m_[l], v_[l]);
            apply(b_[l], g.b[l], mb_[l], vb_[l]);
        }
    }

    std::vector<int> sizes_;
    std::vector<std::vector<double>> w_, b_;
    std::vector<std::vector<double>> m_, v_, mb_, vb_;
    long long adam_t_ = 0;
};

}  // namespace gridlight
