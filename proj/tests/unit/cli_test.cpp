#include "lowbit/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lowbit/model_io.hpp"
#include "support/fixtures.hpp"

namespace {

using lowbit::QuantizedModel;

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("lowbit");
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = lowbit::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    EXPECT_TRUE(f.good()) << path;
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// 28x28 synthetic digits so the stock MLP architecture applies.
struct TinyWorld {
    fixtures::TempDir dir{"cli"};
    std::string data;

    TinyWorld() {
        data = dir.path("mnist");
        fixtures::write_tiny_mnist(data, 64, 28, /*gzipped=*/true);
    }

    std::vector<std::string> pretrain_args(const std::string& out, int epochs) const {
        return {"pretrain", "--data", data,        "--out",  out,
                "--epochs", std::to_string(epochs), "--seed", "11"};
    }
};

double parse_field(const std::string& text, const std::string& key) {
    const std::size_t pos = text.find(key + "=");
    EXPECT_NE(pos, std::string::npos) << key << " not in: " << text;
    return std::stod(text.substr(pos + key.size() + 1));
}

TEST(CliPretrain, WritesArtifactsAndIsDeterministic) {
    TinyWorld w;
    const CliResult a = run(w.pretrain_args(w.dir.path("a"), 2));
    ASSERT_EQ(a.exit_code, 0) << a.err;
    EXPECT_NE(a.out.find("model="), std::string::npos);
    EXPECT_NE(a.out.find("accuracy="), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(w.dir.path("a/model.lbm")));
    EXPECT_TRUE(std::filesystem::exists(w.dir.path("a/metrics.csv")));
    EXPECT_TRUE(std::filesystem::exists(w.dir.path("a/effective.cfg")));

    const CliResult b = run(w.pretrain_args(w.dir.path("b"), 2));
    ASSERT_EQ(b.exit_code, 0) << b.err;
    EXPECT_EQ(read_text(w.dir.path("a/metrics.csv")), read_text(w.dir.path("b/metrics.csv")));
    EXPECT_EQ(read_text(w.dir.path("a/model.lbm")), read_text(w.dir.path("b/model.lbm")));

    const std::string csv = read_text(w.dir.path("a/metrics.csv"));
    EXPECT_EQ(csv.rfind("epoch,train_loss,eval_accuracy\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 epochs
}

TEST(CliPretrain, ZeroEpochsSavesInitializationWithHeaderOnlyCsv) {
    TinyWorld w;
    const CliResult r = run(w.pretrain_args(w.dir.path("z"), 0));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(read_text(w.dir.path("z/metrics.csv")), "epoch,train_loss,eval_accuracy\n");
    // untrained network on synthetic labels: far below any trained accuracy
    EXPECT_LT(parse_field(r.out, "accuracy"), 0.5);
}

TEST(CliPretrain, ConfigEchoRoundTripReproducesRun) {
    TinyWorld w;
    const CliResult a = run(w.pretrain_args(w.dir.path("a"), 1));
    ASSERT_EQ(a.exit_code, 0) << a.err;

    const CliResult b = run({"pretrain", "--config", w.dir.path("a/effective.cfg"), "--out",
                             w.dir.path("b")});
    ASSERT_EQ(b.exit_code, 0) << b.err;
    EXPECT_EQ(read_text(w.dir.path("a/model.lbm")), read_text(w.dir.path("b/model.lbm")));
    EXPECT_EQ(read_text(w.dir.path("a/metrics.csv")), read_text(w.dir.path("b/metrics.csv")));
}

TEST(CliPretrain, UnknownConfigKeyIsRejected) {
    TinyWorld w;
    const std::string cfg = w.dir.path("bad.cfg");
    lowbit::cli::write_text(cfg, "epochs=1\nbogus_knob=3\n");
    const CliResult r = run({"pretrain", "--config", cfg, "--data", w.data, "--out",
                             w.dir.path("x")});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(CliQuantize, ProducesFeasibleModelAndConsistentEval) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);

    const CliResult q = run({"quantize", "--data", w.data, "--model",
                             w.dir.path("pre/model.lbm"), "--out", w.dir.path("q"), "--set",
                             "ternary", "--rounds", "3", "--steps", "2", "--seed", "11"});
    ASSERT_EQ(q.exit_code, 0) << q.err;

    const QuantizedModel m = lowbit::load(w.dir.path("q/model.lbm"));
    ASSERT_EQ(m.layers.size(), 2u);
    for (const lowbit::ModelLayer& l : m.layers)
        EXPECT_EQ(l.payload.kind, lowbit::PolicyKind::codebook);
    EXPECT_TRUE(m.fully_quantized());

    // the accuracy printed by quantize is the saved model's accuracy
    const CliResult e = run({"eval", "--data", w.data, "--model", w.dir.path("q/model.lbm"),
                             "--split", "test"});
    ASSERT_EQ(e.exit_code, 0) << e.err;
    EXPECT_EQ(parse_field(q.out, "accuracy"), parse_field(e.out, "accuracy"));

    const std::string csv = read_text(w.dir.path("q/metrics.csv"));
    EXPECT_EQ(csv.rfind("round,train_loss,eval_accuracy,primal_residual,alpha_fc0,alpha_fc1", 0),
              0u);
}

TEST(CliQuantize, FullPrecisionPolicyIsBitwisePassthrough) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);

    const CliResult q = run({"quantize", "--data", w.data, "--model",
                             w.dir.path("pre/model.lbm"), "--out", w.dir.path("q"),
                             "--layer-policy", "fc_last=full_precision", "--rounds", "2",
                             "--steps", "2", "--seed", "11"});
    ASSERT_EQ(q.exit_code, 0) << q.err;

    const QuantizedModel before = lowbit::load(w.dir.path("pre/model.lbm"));
    const QuantizedModel after = lowbit::load(w.dir.path("q/model.lbm"));
    ASSERT_EQ(after.layers.size(), 2u);
    EXPECT_EQ(after.layers[0].payload.kind, lowbit::PolicyKind::codebook);
    ASSERT_EQ(after.layers[1].payload.kind, lowbit::PolicyKind::full_precision);
    EXPECT_FALSE(after.fully_quantized());

    const lowbit::Tensor& w_before = before.layers[1].payload.dense;
    const lowbit::Tensor& w_after = after.layers[1].payload.dense;
    ASSERT_EQ(w_before.size(), w_after.size());
    for (std::size_t i = 0; i < w_before.size(); ++i)
        ASSERT_EQ(w_before[i], w_after[i]) << i;
    const lowbit::Tensor& b_before = before.layers[1].bias;
    const lowbit::Tensor& b_after = after.layers[1].bias;
    ASSERT_EQ(b_before.size(), b_after.size());
    for (std::size_t i = 0; i < b_before.size(); ++i)
        ASSERT_EQ(b_before[i], b_after[i]) << i;
}

TEST(CliQuantize, RepeatedRunsAreByteIdentical) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);
    const auto args = [&](const std::string& out) {
        return std::vector<std::string>{
            "quantize", "--data", w.data,          "--model", w.dir.path("pre/model.lbm"),
            "--out",    out,      "--set",         "pow2:2",  "--rounds",
            "2",        "--steps", "2",            "--seed",  "11"};
    };
    ASSERT_EQ(run(args(w.dir.path("q1"))).exit_code, 0);
    ASSERT_EQ(run(args(w.dir.path("q2"))).exit_code, 0);
    EXPECT_EQ(read_text(w.dir.path("q1/model.lbm")), read_text(w.dir.path("q2/model.lbm")));
    EXPECT_EQ(read_text(w.dir.path("q1/metrics.csv")), read_text(w.dir.path("q2/metrics.csv")));
}

TEST(CliQuantize, BadPolicySelectorIsRejected) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);
    const CliResult r = run({"quantize", "--data", w.data, "--model",
                             w.dir.path("pre/model.lbm"), "--out", w.dir.path("q"),
                             "--layer-policy", "fc9=int8"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.err.find("fc9"), std::string::npos) << r.err;
}

TEST(CliEval, RejectsUnknownSplitAndMissingModel) {
    TinyWorld w;
    const CliResult bad_split = run({"eval", "--data", w.data, "--model", "nope.lbm",
                                     "--split", "validation"});
    EXPECT_EQ(bad_split.exit_code, 1);
    EXPECT_EQ(bad_split.err.rfind("error: ", 0), 0u) << bad_split.err;

    const CliResult no_model = run({"eval", "--data", w.data});
    EXPECT_EQ(no_model.exit_code, 1);
    EXPECT_NE(no_model.err.find("--model"), std::string::npos) << no_model.err;
}

TEST(CliEval, MatchesFinalCsvRowOfPretrain) {
    TinyWorld w;
    const CliResult p = run(w.pretrain_args(w.dir.path("pre"), 2));
    ASSERT_EQ(p.exit_code, 0) << p.err;
    const CliResult e = run({"eval", "--data", w.data, "--model", w.dir.path("pre/model.lbm")});
    ASSERT_EQ(e.exit_code, 0) << e.err;

    const std::string csv = read_text(w.dir.path("pre/metrics.csv"));
    const std::size_t last_comma = csv.find_last_of(',');
    const double csv_acc = std::stod(csv.substr(last_comma + 1));
    EXPECT_EQ(parse_field(e.out, "accuracy"), csv_acc);
}

TEST(CliExport, PacksUnpacksAndStaysByteStable) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);
    ASSERT_EQ(run({"quantize", "--data", w.data, "--model", w.dir.path("pre/model.lbm"),
                   "--out", w.dir.path("q"), "--rounds", "2", "--steps", "2"})
                  .exit_code,
              0);

    const std::string packed = w.dir.path("packed.lbm");
    const std::string unpacked = w.dir.path("unpacked.lbm");
    ASSERT_EQ(run({"export", "--model", w.dir.path("q/model.lbm"), "--out", packed}).exit_code,
              0);
    ASSERT_EQ(run({"export", "--model", w.dir.path("q/model.lbm"), "--out", unpacked,
                   "--unpack"})
                  .exit_code,
              0);
    EXPECT_LT(std::filesystem::file_size(packed), std::filesystem::file_size(unpacked));

    // packed and unpacked decode to the same model; re-export is byte-stable
    const QuantizedModel mp = lowbit::load(packed);
    const QuantizedModel mu = lowbit::load(unpacked);
    ASSERT_EQ(mp.layers.size(), mu.layers.size());
    for (std::size_t k = 0; k < mp.layers.size(); ++k) {
        EXPECT_EQ(mp.layers[k].payload.q.codes, mu.layers[k].payload.q.codes);
        EXPECT_EQ(mp.layers[k].payload.q.alpha, mu.layers[k].payload.q.alpha);
    }
    const std::string repacked = w.dir.path("repacked.lbm");
    ASSERT_EQ(run({"export", "--model", unpacked, "--out", repacked}).exit_code, 0);
    EXPECT_EQ(read_text(packed), read_text(repacked));
}

TEST(CliInspect, PrintsPerLayerReport) {
    TinyWorld w;
    ASSERT_EQ(run(w.pretrain_args(w.dir.path("pre"), 1)).exit_code, 0);
    ASSERT_EQ(run({"quantize", "--data", w.data, "--model", w.dir.path("pre/model.lbm"),
                   "--out", w.dir.path("q"), "--set", "pow2:2", "--rounds", "2", "--steps",
                   "2"})
                  .exit_code,
              0);
    const CliResult r = run({"inspect", "--model", w.dir.path("q/model.lbm")});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_NE(r.out.find("format=LBADMM01 version=1 layers=2"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("layer=fc0 payload=codebook set=pow2:2 alphabet={-4,-2,-1,0,1,2,4}"),
              std::string::npos)
        << r.out;
    EXPECT_NE(r.out.find("bits_per_weight=3"), std::string::npos) << r.out;
}

TEST(CliTopLevel, HelpExitsZeroAndBadCommandFails) {
    EXPECT_EQ(run({"--help"}).exit_code, 0);
    const CliResult r = run({"transmogrify"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
}

} // namespace
