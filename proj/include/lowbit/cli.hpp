#pragma once

// Command-line front end: pretrain / quantize / eval / export / inspect.
// Every option can come from a config file (--config); command-line flags win.
// The effective configuration is echoed into the output directory so a run can
// be reproduced from its own artifacts.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lowbit/admm.hpp"
#include "lowbit/data.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/model_io.hpp"
#include "lowbit/network.hpp"
#include "lowbit/quantset.hpp"
#include "lowbit/rng.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {
namespace cli {

// Both MNIST splits, centered with the training-split scalar mean.
struct MnistData {
    Dataset train;
    Dataset test;
    double mean = 0.0;
};

inline MnistData load_centered(const std::string& dir) {
    MnistData d;
    d.train = load_mnist_train(dir);
    d.test = load_mnist_test(dir);
    d.mean = d.train.pixel_mean();
    d.train.subtract_mean(d.mean);
    d.test.subtract_mean(d.mean);
    return d;
}

inline Network make_network(const std::string& arch) {
    if (arch == "mlp") return Network::mlp();
    if (arch == "cnn") return Network::cnn();
    throw ConfigError("unknown architecture '" + arch + "' (expected mlp or cnn)");
}

// --- layer policies -------------------------------------------------------
//
// Selectors: an exact layer name ("fc0", "conv1"), "all", "fc_last" (the last
// fully-connected layer), or "1x1" (convolutions with kernel size 1). Entries
// apply in order, later ones override earlier ones.

inline std::vector<LayerPolicy> resolve_policies(const Network& net, const std::string& set_name,
                                                 const std::vector<std::string>& overrides) {
    const std::vector<std::string> names = net.weight_layer_names();
    std::vector<LayerPolicy> policies(names.size(),
                                      LayerPolicy::codebook(QuantizationSet::parse(set_name)));

    std::vector<std::string> entries;
    for (const std::string& o : overrides) {
        std::size_t start = 0;
        while (start <= o.size()) {
            const std::size_t comma = o.find(',', start);
            entries.push_back(o.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    // layer kinds/kernels aligned with weight layer order
    std::vector<const LayerSpec*> specs;
    for (const LayerSpec& l : net.layers)
        if (l.parameterized()) specs.push_back(&l);

    for (const std::string& entry : entries) {
        if (entry.empty()) continue;
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigError("layer-policy entry '" + entry + "' is not selector=policy");
        const std::string selector = entry.substr(0, eq);
        const LayerPolicy policy = LayerPolicy::parse(entry.substr(eq + 1));

        bool matched = false;
        for (std::size_t k = 0; k < names.size(); ++k) {
            bool hit = false;
            if (selector == "all" || selector == names[k]) {
                hit = true;
            } else if (selector == "fc_last") {
                hit = specs[k]->kind == LayerKind::fully_connected;
                for (std::size_t j = k + 1; hit && j < names.size(); ++j)
                    if (specs[j]->kind == LayerKind::fully_connected) hit = false;
            } else if (selector == "1x1") {
                hit = specs[k]->kind == LayerKind::conv2d && specs[k]->kernel == 1;
            }
            if (hit) {
                policies[k] = policy;
                matched = true;
            }
        }
        if (!matched && selector != "1x1")
            throw ConfigError("layer-policy selector '" + selector +
                              "' matches no layer (layers: " + [&] {
                                  std::string s;
                                  for (const std::string& n : names) s += n + " ";
                                  return s + "plus all, fc_last, 1x1)";
                              }());
    }
    return policies;
}

// --- artifacts -------------------------------------------------------------

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(text.data(), static_cast<std::streamsize>(text.size())))
        throw FormatError("cannot write '" + path + "'");
}

inline std::string prepare_out_dir(const std::string& out, const std::string& effective_config) {
    if (out.empty()) throw ConfigError("--out is required");
    std::filesystem::create_directories(out);
    write_text((std::filesystem::path(out) / "effective.cfg").string(), effective_config);
    return out;
}

// --- pretrain ----------------------------------------------------------------

struct PretrainOptions {
    std::string data = "data/mnist";
    std::string out;
    std::string arch = "mlp";
    int epochs = 10;
    int batch_size = 128;
    double lr = 0.1;
    double lr_decay_factor = 0.5;
    int lr_decay_every = 5;  // epochs; 0 disables
    double momentum = 0.9;
    std::uint64_t seed = 7;
};

struct EpochRecord {
    int epoch;
    double train_loss;
    double eval_accuracy;
};

inline void write_epoch_csv(const std::string& path, const std::vector<EpochRecord>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write '" + path + "'");
    f << "epoch,train_loss,eval_accuracy\n";
    for (const EpochRecord& r : rows)
        f << r.epoch << ',' << detail::format_double(r.train_loss) << ','
          << detail::format_double(r.eval_accuracy) << "\n";
}

inline int cmd_pretrain(const PretrainOptions& opt, const std::string& effective_config,
                        std::ostream& out_stream) {
    const MnistData data = load_centered(opt.data);
    const std::string out = prepare_out_dir(opt.out, effective_config);

    Network net = make_network(opt.arch);
    Rng init = Rng::substream(opt.seed, "init");
    net.init_weights(init);

    LrSchedule lr_schedule;
    lr_schedule.every = opt.lr_decay_every;
    lr_schedule.factor = opt.lr_decay_factor;

    BatchStream stream(data.train, opt.batch_size, opt.seed);
    Gradients velocity = Gradients::zeros_like(net);
    Gradients grads;
    std::vector<EpochRecord> rows;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        const double lr = opt.lr * lr_schedule.at_round(epoch);
        double loss_sum = 0;
        const int steps = stream.batches_per_epoch();
        for (int s = 0; s < steps; ++s) {
            const BatchStream::Batch batch = stream.next();
            loss_sum += backward(net, batch.images, batch.labels, grads);
            if (!std::isfinite(loss_sum))
                throw DivergenceError("pretraining diverged in epoch " + std::to_string(epoch) +
                                      "; lower --lr");
            sgd_step(net, grads, lr, opt.momentum, &velocity);
        }
        rows.push_back({epoch, loss_sum / steps,
                        accuracy(net, data.test.images, data.test.labels)});
    }

    save(model_from_network(net), (std::filesystem::path(out) / "model.lbm").string());
    write_epoch_csv((std::filesystem::path(out) / "metrics.csv").string(), rows);

    const double final_acc =
        rows.empty() ? accuracy(net, data.test.images, data.test.labels)
                     : rows.back().eval_accuracy;
    out_stream << "model=" << out << "/model.lbm accuracy="
               << detail::format_double(final_acc) << "\n";
    return 0;
}

// --- quantize ----------------------------------------------------------------

struct QuantizeOptions {
    std::string data = "data/mnist";
    std::string model;
    std::string out;
    std::string set = "ternary";
    std::vector<std::string> layer_policy;
    double rho = 1e-2;
    double rho_growth = 1.5;
    int rho_every = 10;
    double rho_cap = 1.0;
    // default 0.05: the learning rate the default pretrain schedule ends at
    double beta_p = 0.05;
    double beta_c = 0.05;
    int steps = 0;  // proximal steps per round; 0 = one epoch
    int rounds = 30;
    double tolerance = 1e-2;
    int tolerance_rounds = 3;
    double lr_decay_factor = 0.5;
    int lr_decay_every = 0;  // rounds; 0 disables
    int batch_size = 64;
    std::uint64_t seed = 7;
};

// full_precision means passthrough: the layer (weights and bias) is left
// untouched, which we get by zeroing its loss gradients — the penalty term
// never applies to unconstrained layers, so the variables cannot move.
class PassthroughProblem : public NetworkProblem {
public:
    PassthroughProblem(Network net, const Dataset& train, const Dataset* eval_set,
                       int batch_size, std::uint64_t seed, std::vector<bool> frozen)
        : NetworkProblem(std::move(net), train, eval_set, batch_size, seed),
          frozen_(std::move(frozen)) {}

    double loss_and_gradient(const std::vector<Tensor>& vars,
                             std::vector<Tensor>& grads) override {
        const double loss = NetworkProblem::loss_and_gradient(vars, grads);
        for (std::size_t i = 0; i < grads.size() && i < frozen_.size(); ++i)
            if (frozen_[i]) grads[i] = Tensor(grads[i].shape());
        return loss;
    }

private:
    std::vector<bool> frozen_;
};

inline std::vector<bool> frozen_mask(const Network& net, const std::vector<LayerPolicy>& policies) {
    const std::size_t nw = net.weights.size();
    std::vector<bool> frozen(nw + net.biases.size(), false);
    for (std::size_t k = 0; k < policies.size(); ++k)
        if (policies[k].kind == PolicyKind::full_precision) frozen[k] = frozen[nw + k] = true;
    return frozen;
}

inline AdmmConfig admm_config_from(const QuantizeOptions& opt,
                                   std::vector<LayerPolicy> policies) {
    AdmmConfig cfg;
    cfg.rho.initial = opt.rho;
    cfg.rho.growth = opt.rho_growth;
    cfg.rho.every = opt.rho_every;
    cfg.rho.cap = opt.rho_cap;
    cfg.beta_p = opt.beta_p;
    cfg.beta_c = opt.beta_c;
    cfg.proximal_steps_per_round = opt.steps;
    cfg.max_rounds = opt.rounds;
    cfg.primal_tolerance = opt.tolerance;
    cfg.tolerance_rounds = opt.tolerance_rounds;
    cfg.lr_schedule.factor = opt.lr_decay_factor;
    cfg.lr_schedule.every = opt.lr_decay_every;
    cfg.layer_policy = std::move(policies);
    cfg.seed = opt.seed;
    return cfg;
}

inline int cmd_quantize(const QuantizeOptions& opt, const std::string& effective_config,
                        std::ostream& out_stream) {
    const MnistData data = load_centered(opt.data);
    const QuantizedModel pretrained = load(opt.model);
    const std::string out = prepare_out_dir(opt.out, effective_config);

    Network net = to_network(pretrained);
    const std::vector<LayerPolicy> policies = resolve_policies(net, opt.set, opt.layer_policy);
    const AdmmConfig cfg = admm_config_from(opt, policies);

    PassthroughProblem problem(net, data.train, &data.test, opt.batch_size, opt.seed,
                               frozen_mask(net, policies));
    const AdmmResult res = admm_train(problem, cfg);

    // assemble the output model: per-layer G payloads plus the trained biases
    QuantizedModel model;
    model.architecture = pretrained.architecture;
    const std::size_t nw = net.weights.size();
    const std::vector<std::string> names = net.weight_layer_names();
    for (std::size_t k = 0; k < nw; ++k) {
        ModelLayer l;
        l.name = names[k];
        l.payload = res.state.G[k];
        l.bias = res.state.vars[nw + k];
        model.layers.push_back(std::move(l));
    }

    save(model, (std::filesystem::path(out) / "model.lbm").string());
    write_history_csv((std::filesystem::path(out) / "metrics.csv").string(), res.history,
                      res.weight_names);

    const RoundRecord& last = res.history.back();
    out_stream << "model=" << out << "/model.lbm converged=" << (res.converged ? 1 : 0)
               << " rounds=" << last.round
               << " residual=" << detail::format_double(last.primal_residual)
               << " accuracy=" << detail::format_double(last.eval_accuracy) << "\n";
    return 0;
}

// --- eval / export / inspect ---------------------------------------------------

struct EvalOptions {
    std::string data = "data/mnist";
    std::string model;
    std::string split = "test";
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out_stream) {
    const MnistData data = load_centered(opt.data);
    const Dataset& split = opt.split == "train" ? data.train : data.test;
    if (opt.split != "train" && opt.split != "test")
        throw ConfigError("unknown split '" + opt.split + "' (expected train or test)");
    if (split.size() == 0)
        throw ConfigError("evaluation split '" + opt.split + "' contains 0 samples");
    const Network net = to_network(load(opt.model));
    const double acc = accuracy(net, split.images, split.labels);
    out_stream << "accuracy=" << detail::format_double(acc) << " samples=" << split.size()
               << " split=" << opt.split << "\n";
    return 0;
}

struct ExportOptions {
    std::string model;
    std::string out;
    bool unpack = false;
};

inline int cmd_export(const ExportOptions& opt, std::ostream& out_stream) {
    QuantizedModel model = load(opt.model);
    for (ModelLayer& l : model.layers)
        if (l.payload.kind == PolicyKind::codebook) l.packed = !opt.unpack;
    const std::string bytes = save_bytes(model);
    write_text(opt.out, bytes);
    out_stream << "model=" << opt.out << " bytes=" << bytes.size() << "\n";
    return 0;
}

inline int cmd_inspect(const std::string& model_path, std::ostream& out_stream) {
    out_stream << inspect_report(load(model_path));
    return 0;
}

// --- wiring -------------------------------------------------------------------

namespace detail {

inline std::string one_line(const std::string& s) {
    std::string t = s;
    std::replace(t.begin(), t.end(), '\n', ' ');
    while (!t.empty() && t.back() == ' ') t.pop_back();
    return t;
}

} // namespace detail

// One parse's worth of CLI state: the app, its subcommands, and the bound
// option structs. Rebuilt from scratch when a config file is merged in.
struct CliState {
    CLI::App app{"Extremely-low-bit network training via ADMM"};
    CLI::App* pre_cmd = nullptr;
    CLI::App* qu_cmd = nullptr;
    CLI::App* ev_cmd = nullptr;
    CLI::App* ex_cmd = nullptr;
    CLI::App* in_cmd = nullptr;
    PretrainOptions pre;
    QuantizeOptions qu;
    EvalOptions ev;
    ExportOptions ex;
    std::string inspect_model;
    std::string config_path;  // shared across subcommands; one parses per run
};

inline void build_cli(CliState& s) {
    s.app.require_subcommand(1);
    const auto add_config = [&s](CLI::App* sub) {
        sub->add_option("--config", s.config_path,
                        "Read options from a key=value file (flags take precedence)")
            ->configurable(false);
    };

    s.pre_cmd = s.app.add_subcommand("pretrain", "Train a full-precision baseline");
    add_config(s.pre_cmd);
    PretrainOptions& pre = s.pre;
    s.pre_cmd->add_option("--data", pre.data, "MNIST directory")->capture_default_str();
    s.pre_cmd->add_option("--out", pre.out, "Output directory");
    s.pre_cmd->add_option("--arch", pre.arch, "Architecture: mlp or cnn")->capture_default_str();
    s.pre_cmd->add_option("--epochs", pre.epochs, "Training epochs")->capture_default_str();
    s.pre_cmd->add_option("--batch-size", pre.batch_size, "Minibatch size")
        ->capture_default_str();
    s.pre_cmd->add_option("--lr", pre.lr, "SGD learning rate")->capture_default_str();
    s.pre_cmd->add_option("--lr-decay-every", pre.lr_decay_every,
                          "Decay the learning rate every N epochs (0 disables)")
        ->capture_default_str();
    s.pre_cmd->add_option("--lr-decay-factor", pre.lr_decay_factor, "Decay multiplier")
        ->capture_default_str();
    s.pre_cmd->add_option("--momentum", pre.momentum, "SGD momentum")->capture_default_str();
    s.pre_cmd->add_option("--seed", pre.seed, "Master seed")->capture_default_str();

    s.qu_cmd = s.app.add_subcommand("quantize", "ADMM-train a low-bit model");
    add_config(s.qu_cmd);
    QuantizeOptions& qu = s.qu;
    s.qu_cmd->add_option("--data", qu.data, "MNIST directory")->capture_default_str();
    s.qu_cmd->add_option("--model", qu.model, "Pretrained model file");
    s.qu_cmd->add_option("--out", qu.out, "Output directory");
    s.qu_cmd->add_option("--set", qu.set, "Quantization set: binary, ternary, pow2:N")
        ->capture_default_str();
    s.qu_cmd->add_option("--layer-policy", qu.layer_policy,
                         "selector=policy overrides (e.g. fc_last=int8, 1x1=full_precision)");
    s.qu_cmd->add_option("--rho", qu.rho, "Initial penalty weight")->capture_default_str();
    s.qu_cmd->add_option("--rho-growth", qu.rho_growth, "Penalty growth factor")
        ->capture_default_str();
    s.qu_cmd->add_option("--rho-every", qu.rho_every, "Rounds between penalty growth steps")
        ->capture_default_str();
    s.qu_cmd->add_option("--rho-cap", qu.rho_cap, "Penalty ceiling")->capture_default_str();
    s.qu_cmd->add_option("--beta-p", qu.beta_p, "Extragradient prediction rate")
        ->capture_default_str();
    s.qu_cmd->add_option("--beta-c", qu.beta_c, "Extragradient correction rate")
        ->capture_default_str();
    s.qu_cmd->add_option("--steps", qu.steps, "Proximal steps per round (0 = one epoch)")
        ->capture_default_str();
    s.qu_cmd->add_option("--rounds", qu.rounds, "Maximum ADMM rounds")->capture_default_str();
    s.qu_cmd->add_option("--tolerance", qu.tolerance, "Relative primal residual tolerance")
        ->capture_default_str();
    s.qu_cmd->add_option("--tolerance-rounds", qu.tolerance_rounds,
                         "Consecutive rounds below tolerance to stop")
        ->capture_default_str();
    s.qu_cmd->add_option("--lr-decay-every", qu.lr_decay_every,
                         "Decay beta_p/beta_c every N rounds (0 disables)")
        ->capture_default_str();
    s.qu_cmd->add_option("--lr-decay-factor", qu.lr_decay_factor, "Decay multiplier")
        ->capture_default_str();
    s.qu_cmd->add_option("--batch-size", qu.batch_size, "Minibatch size")
        ->capture_default_str();
    s.qu_cmd->add_option("--seed", qu.seed, "Master seed")->capture_default_str();

    s.ev_cmd = s.app.add_subcommand("eval", "Report accuracy of a saved model");
    add_config(s.ev_cmd);
    s.ev_cmd->add_option("--data", s.ev.data, "MNIST directory")->capture_default_str();
    s.ev_cmd->add_option("--model", s.ev.model, "Model file");
    s.ev_cmd->add_option("--split", s.ev.split, "Dataset split: train or test")
        ->capture_default_str();

    s.ex_cmd = s.app.add_subcommand("export", "Re-encode a model (bit-packed codes)");
    add_config(s.ex_cmd);
    s.ex_cmd->add_option("--model", s.ex.model, "Model file to read");
    s.ex_cmd->add_option("--out", s.ex.out, "Model file to write");
    s.ex_cmd->add_flag("--unpack", s.ex.unpack, "Store codes as plain int8 instead");

    s.in_cmd = s.app.add_subcommand("inspect", "Print per-layer payload details");
    add_config(s.in_cmd);
    s.in_cmd->add_option("--model", s.inspect_model, "Model file");
}

inline CLI::App* parsed_sub(CliState& s) {
    for (CLI::App* sub : {s.pre_cmd, s.qu_cmd, s.ev_cmd, s.ex_cmd, s.in_cmd})
        if (sub->parsed()) return sub;
    return nullptr;
}

// Translate a config file into command-line arguments, dropping every key the
// user already set on the real command line (flags > file > defaults). A key
// that matches no option of the subcommand is an error.
inline std::vector<std::string> config_as_args(CLI::App& sub, const std::string& path) {
    const std::vector<CLI::ConfigItem> items = sub.get_config_formatter()->from_file(path);
    std::vector<std::string> args;
    for (const CLI::ConfigItem& item : items) {
        if (!item.parents.empty() || item.name == "++" || item.name == "--")
            throw ConfigError("config: sections are not supported ('" + item.fullname() + "')");
        if (item.name == "config")
            throw ConfigError("config: a config file cannot reference another config file");
        const CLI::Option* opt = sub.get_option_no_throw("--" + item.name);
        if (opt == nullptr)
            throw ConfigError("config: unknown key '" + item.name + "' for subcommand '" +
                              sub.get_name() + "'");
        if (opt->count() > 0) continue;  // the command line takes precedence
        if (item.inputs.empty())
            args.push_back("--" + item.name);
        else
            for (const std::string& input : item.inputs)
                args.push_back("--" + item.name + "=" + input);
    }
    return args;
}

inline int dispatch(CliState& s, std::ostream& out_stream) {
    if (s.pre_cmd->parsed()) {
        if (s.pre.out.empty()) throw ConfigError("pretrain: --out is required");
        return cmd_pretrain(s.pre, s.pre_cmd->config_to_str(true, true), out_stream);
    }
    if (s.qu_cmd->parsed()) {
        if (s.qu.model.empty()) throw ConfigError("quantize: --model is required");
        if (s.qu.out.empty()) throw ConfigError("quantize: --out is required");
        return cmd_quantize(s.qu, s.qu_cmd->config_to_str(true, true), out_stream);
    }
    if (s.ev_cmd->parsed()) {
        if (s.ev.model.empty()) throw ConfigError("eval: --model is required");
        return cmd_eval(s.ev, out_stream);
    }
    if (s.ex_cmd->parsed()) {
        if (s.ex.model.empty()) throw ConfigError("export: --model is required");
        if (s.ex.out.empty()) throw ConfigError("export: --out is required");
        return cmd_export(s.ex, out_stream);
    }
    if (s.in_cmd->parsed()) {
        if (s.inspect_model.empty()) throw ConfigError("inspect: --model is required");
        return cmd_inspect(s.inspect_model, out_stream);
    }
    throw ConfigError("no command selected");
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out_stream = std::cout,
                   std::ostream& err_stream = std::cerr) {
    CliState s;
    build_cli(s);
    try {
        s.app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return s.app.exit(e, out_stream, err_stream);
    } catch (const CLI::ParseError& e) {
        err_stream << "error: " << detail::one_line(e.what()) << "\n";
        return 1;
    }

    try {
        CLI::App* sub = parsed_sub(s);
        if (sub != nullptr && !s.config_path.empty()) {
            // merge file values under the command line, then reparse fresh
            const std::vector<std::string> merged = config_as_args(*sub, s.config_path);
            std::vector<std::string> args;
            args.push_back(argv[0] != nullptr ? argv[0] : "lowbit");
            args.push_back(sub->get_name());
            for (const std::string& a : merged) args.push_back(a);
            for (int i = 2; i < argc; ++i) args.emplace_back(argv[i]);

            CliState merged_state;
            build_cli(merged_state);
            std::vector<const char*> argv2;
            for (const std::string& a : args) argv2.push_back(a.c_str());
            try {
                merged_state.app.parse(static_cast<int>(argv2.size()), argv2.data());
            } catch (const CLI::ParseError& e) {
                err_stream << "error: " << detail::one_line(e.what()) << "\n";
                return 1;
            }
            return dispatch(merged_state, out_stream);
        }
        return dispatch(s, out_stream);
    } catch (const std::exception& e) {
        err_stream << "error: " << detail::one_line(e.what()) << "\n";
        return 1;
    }
}

} // namespace cli
} // namespace lowbit
