#pragma once

// ADMM splitting for constrained low-bit training: extragradient proximal
// minimization of the augmented loss, per-layer projection onto the
// quantization set, and the dual (running-error) update.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lowbit/data.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/network.hpp"
#include "lowbit/quantset.hpp"
#include "lowbit/rng.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class PolicyKind { codebook, int8_grid, full_precision };

struct LayerPolicy {
    PolicyKind kind = PolicyKind::codebook;
    QuantizationSet set = QuantizationSet::ternary();

    static LayerPolicy codebook(QuantizationSet s) {
        LayerPolicy p;
        p.kind = PolicyKind::codebook;
        p.set = std::move(s);
        return p;
    }
    static LayerPolicy int8() {
        LayerPolicy p;
        p.kind = PolicyKind::int8_grid;
        return p;
    }
    static LayerPolicy full_precision() {
        LayerPolicy p;
        p.kind = PolicyKind::full_precision;
        return p;
    }
    static LayerPolicy parse(const std::string& s) {
        if (s == "int8") return int8();
        if (s == "full_precision") return full_precision();
        return codebook(QuantizationSet::parse(s));
    }

    std::string name() const {
        switch (kind) {
            case PolicyKind::codebook: return set.name();
            case PolicyKind::int8_grid: return "int8";
            default: return "full_precision";
        }
    }

    bool constrained() const { return kind != PolicyKind::full_precision; }
};

struct RhoSchedule {
    double initial = 1e-2;
    double growth = 1.5;  // 1.0 disables growth
    int every = 10;       // rounds between growth steps
    double cap = 1.0;

    double at_round(int round) const {
        if (growth == 1.0 || every <= 0) return initial;
        double r = initial;
        for (int k = every; k < round; k += every) {
            r *= growth;
            if (r >= cap) return cap;
        }
        return std::min(r, cap);
    }
};

struct LrSchedule {
    double factor = 0.5;  // multiplier applied every `every` rounds; 1.0 disables
    int every = 0;        // 0 disables

    double at_round(int round) const {
        if (every <= 0 || factor == 1.0) return 1.0;
        double m = 1.0;
        for (int k = every; k < round; k += every) m *= factor;
        return m;
    }
};

struct AdmmConfig {
    RhoSchedule rho;
    double beta_p = 0.05;
    double beta_c = 0.05;
    int proximal_steps_per_round = 0;  // 0: one epoch of minibatches
    int max_rounds = 30;
    double primal_tolerance = 1e-2;
    int tolerance_rounds = 3;
    LrSchedule lr_schedule;
    std::vector<LayerPolicy> layer_policy;  // one per weight layer; empty: all ternary
    std::uint64_t seed = 0;
};

// One weight layer's auxiliary variable G under its policy.
struct LayerPayload {
    PolicyKind kind = PolicyKind::full_precision;
    QuantizedLayer q;
    Int8Layer i8;
    Tensor dense;

    Tensor realize() const {
        switch (kind) {
            case PolicyKind::codebook: return q.realize();
            case PolicyKind::int8_grid: return i8.realize();
            default: return dense;
        }
    }

    // codebook alpha or int8 scale; NaN for full precision
    double scale_value() const {
        switch (kind) {
            case PolicyKind::codebook: return q.alpha;
            case PolicyKind::int8_grid: return i8.scale;
            default: return std::numeric_limits<double>::quiet_NaN();
        }
    }
};

inline LayerPayload apply_layer_policy(const Tensor& w, const LayerPolicy& policy,
                                       std::optional<double> warm_alpha = std::nullopt) {
    LayerPayload out;
    out.kind = policy.kind;
    switch (policy.kind) {
        case PolicyKind::codebook:
            out.q = project_quantize(w, policy.set, warm_alpha).layer;
            break;
        case PolicyKind::int8_grid:
            out.i8 = int8_quantize(w);
            break;
        case PolicyKind::full_precision:
            out.dense = w;
            break;
    }
    return out;
}

// A differentiable objective the proximal step can descend. Variables are a
// flat list of tensors; the ones listed by weight_variables() are subject to
// the quantization constraint and layer policies, in that order.
class ProximalProblem {
public:
    virtual ~ProximalProblem() = default;

    virtual std::vector<Tensor> initial_variables() const = 0;
    virtual std::vector<int> weight_variables() const = 0;
    virtual std::string variable_name(int i) const { return "w" + std::to_string(i); }

    virtual int steps_per_epoch() const { return 1; }

    // Advance to the next minibatch (if any); called once per extragradient
    // iteration, before the prediction gradient.
    virtual void begin_step() {}

    // Loss and gradients of f on the current minibatch at `vars`. `grads` is
    // overwritten, shape-matched to vars.
    virtual double loss_and_gradient(const std::vector<Tensor>& vars,
                                     std::vector<Tensor>& grads) = 0;

    // f on the current minibatch without gradients.
    virtual double loss(const std::vector<Tensor>& vars) {
        std::vector<Tensor> g;
        return loss_and_gradient(vars, g);
    }

    // Held-out metric (accuracy) at `vars`; NaN when the problem has none.
    virtual double eval_metric(const std::vector<Tensor>&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
};

struct AdmmState {
    std::vector<Tensor> vars;
    std::vector<int> weight_vars;       // indices into vars, one per weight layer
    std::vector<LayerPolicy> policies;  // aligned with weight_vars
    std::vector<LayerPayload> G;        // aligned with weight_vars
    std::vector<Tensor> lambda;         // aligned; zero-size for full_precision layers
    int round = 0;
    double rho = 1e-2;
};

struct RoundRecord {
    int round = 0;
    double train_loss = 0;
    double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double primal_residual = 0;
    std::vector<double> alphas;  // NaN for full-precision layers
};

struct AdmmResult {
    AdmmState state;
    std::vector<RoundRecord> history;
    bool converged = false;
    std::vector<std::string> weight_names;
};

inline double penalty_term(const AdmmState& st, double rho) {
    double acc = 0;
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
        if (!st.policies[k].constrained()) continue;
        const Tensor& w = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
        const Tensor g = st.G[k].realize();
        const Tensor& l = st.lambda[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double r = w[i] - g[i] + l[i];
            acc += r * r;
        }
    }
    return 0.5 * rho * acc;
}

// f(W) + (rho/2) sum_i ||W_i - G_i + lambda_i||^2 on one batch.
inline double augmented_loss(const Network& net, const std::vector<LayerPayload>& G,
                             const std::vector<Tensor>& lambda, double rho, const Tensor& batch,
                             const std::vector<int>& labels) {
    if (G.size() != net.weights.size() || lambda.size() != net.weights.size())
        throw ShapeError("augmented_loss: per-layer state count mismatch");
    double acc = 0;
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        if (lambda[k].size() == 0) continue;  // unconstrained layer
        const Tensor& w = net.weights[k];
        require_same_shape(w, lambda[k], "augmented_loss");
        const Tensor g = G[k].realize();
        require_same_shape(w, g, "augmented_loss");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double r = w[i] - g[i] + lambda[k][i];
            acc += r * r;
        }
    }
    return forward(net, batch, labels) + 0.5 * rho * acc;
}

inline AdmmState init_admm_state(ProximalProblem& problem, const AdmmConfig& config) {
    AdmmState st;
    st.vars = problem.initial_variables();
    st.weight_vars = problem.weight_variables();
    st.policies = config.layer_policy;
    if (st.policies.empty())
        st.policies.assign(st.weight_vars.size(),
                           LayerPolicy::codebook(QuantizationSet::ternary()));
    if (st.policies.size() != st.weight_vars.size())
        throw ConfigError("layer_policy: expected " + std::to_string(st.weight_vars.size()) +
                          " entries, got " + std::to_string(st.policies.size()));
    st.rho = config.rho.at_round(1);
    st.G.resize(st.weight_vars.size());
    st.lambda.resize(st.weight_vars.size());
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
        const Tensor& w = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
        st.G[k] = apply_layer_policy(w, st.policies[k]);
        if (st.policies[k].constrained()) st.lambda[k] = Tensor(w.shape());
    }
    return st;
}

// One round of extragradient iterations on the augmented loss. Both the
// prediction and the correction step start from the current iterate; only the
// gradient location differs. Returns the mean minibatch f-loss at the
// prediction points.
inline double proximal_step(AdmmState& st, const AdmmConfig& config, ProximalProblem& problem,
                            int steps) {
    const double decay = config.lr_schedule.at_round(st.round > 0 ? st.round : 1);
    const double bp = config.beta_p * decay;
    const double bc = config.beta_c * decay;
    std::vector<Tensor> grads, grads2;
    std::vector<Tensor> predicted(st.vars.size());
    double loss_sum = 0;

    const auto add_penalty = [&](std::vector<Tensor>& g, const std::vector<Tensor>& at) {
        for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
            if (!st.policies[k].constrained()) continue;
            const std::size_t vi = static_cast<std::size_t>(st.weight_vars[k]);
            const Tensor gk = st.G[k].realize();
            const Tensor& w = at[vi];
            const Tensor& l = st.lambda[k];
            for (std::size_t i = 0; i < w.size(); ++i)
                g[vi][i] += st.rho * (w[i] - gk[i] + l[i]);
        }
    };

    for (int t = 0; t < steps; ++t) {
        problem.begin_step();

        const double f1 = problem.loss_and_gradient(st.vars, grads);
        add_penalty(grads, st.vars);
        for (std::size_t v = 0; v < st.vars.size(); ++v) {
            predicted[v] = st.vars[v];
            add_scaled(predicted[v], grads[v], -bp);
        }

        const double f2 = problem.loss_and_gradient(predicted, grads2);
        add_penalty(grads2, predicted);
        for (std::size_t v = 0; v < st.vars.size(); ++v)
            add_scaled(st.vars[v], grads2[v], -bc);

        if (!std::isfinite(f1) || !std::isfinite(f2))
            throw DivergenceError("proximal step diverged (round " + std::to_string(st.round) +
                                  ", step " + std::to_string(t + 1) + ", loss " +
                                  std::to_string(f1) + "/" + std::to_string(f2) +
                                  "); lower beta_p/beta_c");
        loss_sum += f1;
    }
    return steps > 0 ? loss_sum / steps : 0.0;
}

// Project each constrained layer's W + lambda under its policy, warm-starting
// codebook scales from the previous round.
inline void project_step(AdmmState& st) {
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
        if (!st.policies[k].constrained()) {
            st.G[k].dense = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
            continue;
        }
        const Tensor& w = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
        const Tensor v = elementwise_add(w, st.lambda[k]);
        try {
            if (st.policies[k].kind == PolicyKind::codebook)
                st.G[k] = apply_layer_policy(v, st.policies[k], st.G[k].q.alpha);
            else
                st.G[k] = apply_layer_policy(v, st.policies[k]);
        } catch (const DegenerateCodesError& e) {
            throw DegenerateCodesError(std::string(e.what()) + " (layer " +
                                       std::to_string(k) + ")");
        }
    }
}

inline void dual_update(AdmmState& st) {
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
        if (!st.policies[k].constrained()) continue;
        const Tensor& w = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
        const Tensor g = st.G[k].realize();
        Tensor& l = st.lambda[k];
        for (std::size_t i = 0; i < w.size(); ++i) l[i] += w[i] - g[i];
    }
}

// sqrt(sum ||W-G||^2 / sum ||W||^2) over constrained layers.
inline double primal_residual(const AdmmState& st) {
    double num = 0, den = 0;
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k) {
        if (!st.policies[k].constrained()) continue;
        const Tensor& w = st.vars[static_cast<std::size_t>(st.weight_vars[k])];
        const Tensor g = st.G[k].realize();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double d = w[i] - g[i];
            num += d * d;
            den += w[i] * w[i];
        }
    }
    if (den == 0) return 0.0;
    return std::sqrt(num / den);
}

// Substitute G into the weight slots (the reported model is always G).
inline std::vector<Tensor> substituted_vars(const AdmmState& st) {
    std::vector<Tensor> vars = st.vars;
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k)
        vars[static_cast<std::size_t>(st.weight_vars[k])] = st.G[k].realize();
    return vars;
}

inline AdmmResult admm_train(ProximalProblem& problem, const AdmmConfig& config) {
    AdmmResult res;
    res.state = init_admm_state(problem, config);
    AdmmState& st = res.state;
    for (std::size_t k = 0; k < st.weight_vars.size(); ++k)
        res.weight_names.push_back(problem.variable_name(st.weight_vars[k]));

    // A start that is already exactly feasible is a fixed point of the
    // splitting; report it as round 1 and stop before any proximal drift.
    if (primal_residual(st) == 0.0) {
        st.round = 1;
        RoundRecord rec;
        rec.round = 1;
        rec.train_loss = std::numeric_limits<double>::quiet_NaN();
        rec.primal_residual = 0.0;
        rec.eval_accuracy = problem.eval_metric(substituted_vars(st));
        for (std::size_t k = 0; k < st.G.size(); ++k)
            rec.alphas.push_back(st.G[k].scale_value());
        res.history.push_back(rec);
        res.converged = true;
        st.vars = substituted_vars(st);
        return res;
    }

    const int steps = config.proximal_steps_per_round > 0 ? config.proximal_steps_per_round
                                                          : problem.steps_per_epoch();
    int consecutive_below = 0;
    for (int round = 1; round <= config.max_rounds; ++round) {
        st.round = round;
        st.rho = config.rho.at_round(round);

        const double train_loss = proximal_step(st, config, problem, steps);
        project_step(st);
        dual_update(st);

        RoundRecord rec;
        rec.round = round;
        rec.train_loss = train_loss;
        rec.primal_residual = primal_residual(st);
        rec.eval_accuracy = problem.eval_metric(substituted_vars(st));
        for (std::size_t k = 0; k < st.G.size(); ++k)
            rec.alphas.push_back(st.G[k].scale_value());
        res.history.push_back(rec);

        if (rec.primal_residual == 0.0) {
            res.converged = true;
            break;
        }
        consecutive_below = rec.primal_residual < config.primal_tolerance
                                ? consecutive_below + 1
                                : 0;
        if (consecutive_below >= config.tolerance_rounds) {
            res.converged = true;
            break;
        }
    }

    st.vars = substituted_vars(st);
    return res;
}

namespace detail {

// %.17g round-trips doubles exactly and keeps CSV output byte-stable.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline void write_history_csv(const std::string& path, const std::vector<RoundRecord>& history,
                              const std::vector<std::string>& weight_names) {
    std::ofstream f(path, std::ios::binary);  // binary: no platform newline surprises
    if (!f) throw FormatError("cannot write '" + path + "'");
    f << "round,train_loss,eval_accuracy,primal_residual";
    for (const std::string& n : weight_names) f << ",alpha_" << n;
    f << "\n";
    for (const RoundRecord& r : history) {
        f << r.round << ',' << detail::format_double(r.train_loss) << ','
          << detail::format_double(r.eval_accuracy) << ','
          << detail::format_double(r.primal_residual);
        for (double a : r.alphas) f << ',' << detail::format_double(a);
        f << "\n";
    }
}

// Minibatch cross-entropy training problem over a Network. Variables are the
// weight tensors followed by the bias tensors.
class NetworkProblem : public ProximalProblem {
public:
    NetworkProblem(Network net, const Dataset& train, const Dataset* eval_set, int batch_size,
                   std::uint64_t seed)
        : net_(std::move(net)),
          train_(&train),
          eval_(eval_set),
          stream_(train, batch_size, seed) {}

    std::vector<Tensor> initial_variables() const override {
        std::vector<Tensor> vars = net_.weights;
        for (const Tensor& b : net_.biases) vars.push_back(b);
        return vars;
    }

    std::vector<int> weight_variables() const override {
        std::vector<int> idx(net_.weights.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        return idx;
    }

    std::string variable_name(int i) const override {
        const std::vector<std::string> names = net_.weight_layer_names();
        if (i < static_cast<int>(names.size())) return names[static_cast<std::size_t>(i)];
        return "bias" + std::to_string(i - static_cast<int>(names.size()));
    }

    int steps_per_epoch() const override { return stream_.batches_per_epoch(); }

    void begin_step() override { batch_ = stream_.next(); }

    double loss_and_gradient(const std::vector<Tensor>& vars,
                             std::vector<Tensor>& grads) override {
        assign(vars);
        Gradients g;
        const double loss = backward(net_, batch_.images, batch_.labels, g);
        grads = std::move(g.weights);
        for (Tensor& b : g.biases) grads.push_back(std::move(b));
        return loss;
    }

    double loss(const std::vector<Tensor>& vars) override {
        assign(vars);
        return forward(net_, batch_.images, batch_.labels);
    }

    double eval_metric(const std::vector<Tensor>& vars) override {
        if (!eval_) return std::numeric_limits<double>::quiet_NaN();
        assign(vars);
        return accuracy(net_, eval_->images, eval_->labels);
    }

    const Network& network_with(const std::vector<Tensor>& vars) {
        assign(vars);
        return net_;
    }

    const BatchStream::Batch& current_batch() const { return batch_; }

private:
    void assign(const std::vector<Tensor>& vars) {
        const std::size_t nw = net_.weights.size();
        if (vars.size() != nw + net_.biases.size())
            throw ShapeError("NetworkProblem: variable count mismatch");
        for (std::size_t i = 0; i < nw; ++i) net_.weights[i] = vars[i];
        for (std::size_t i = 0; i < net_.biases.size(); ++i) net_.biases[i] = vars[nw + i];
    }

    Network net_;
    const Dataset* train_;
    const Dataset* eval_;
    BatchStream stream_;
    BatchStream::Batch batch_;
};

} // namespace lowbit
