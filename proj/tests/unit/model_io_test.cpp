#include <gtest/gtest.h>

#include <cstring>
#include <string>
#include <vector>

#include "json.hpp"
#include "lowbit/model_io.hpp"
#include "lowbit/rng.hpp"
#include "support/fixtures.hpp"

using lowbit::LayerSpec;
using lowbit::ModelLayer;
using lowbit::Network;
using lowbit::PolicyKind;
using lowbit::QuantizationSet;
using lowbit::QuantizedModel;
using lowbit::Rng;
using lowbit::Tensor;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape);
    for (double& v : t.values()) v = scale * rng.next_normal();
    return t;
}

// fc(6,4) / relu / fc(4,3) with a ternary codebook first layer and a dense head.
QuantizedModel tiny_model(bool packed = false) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(6, 4), LayerSpec::relu(), LayerSpec::fc(4, 3),
                      LayerSpec::softmax_ce()};
    Rng rng(11);

    ModelLayer l0;
    l0.name = "fc0";
    l0.packed = packed;
    l0.payload = lowbit::apply_layer_policy(
        random_tensor({4, 6}, rng), lowbit::LayerPolicy::codebook(QuantizationSet::ternary()));
    l0.bias = random_tensor({4}, rng, 0.1);
    m.layers.push_back(std::move(l0));

    ModelLayer l1;
    l1.name = "fc1";
    l1.payload.kind = PolicyKind::full_precision;
    l1.payload.dense = random_tensor({3, 4}, rng);
    l1.bias = random_tensor({3}, rng, 0.1);
    m.layers.push_back(std::move(l1));
    return m;
}

void expect_models_equal(const QuantizedModel& a, const QuantizedModel& b) {
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        const ModelLayer& la = a.layers[k];
        const ModelLayer& lb = b.layers[k];
        EXPECT_EQ(la.name, lb.name);
        EXPECT_EQ(la.packed, lb.packed);
        ASSERT_EQ(la.payload.kind, lb.payload.kind);
        switch (la.payload.kind) {
            case PolicyKind::codebook:
                EXPECT_EQ(la.payload.q.codes, lb.payload.q.codes);
                EXPECT_EQ(la.payload.q.alpha, lb.payload.q.alpha);
                EXPECT_TRUE(la.payload.q.set == lb.payload.q.set);
                break;
            case PolicyKind::int8_grid:
                EXPECT_EQ(la.payload.i8.codes, lb.payload.i8.codes);
                EXPECT_EQ(la.payload.i8.scale, lb.payload.i8.scale);
                break;
            case PolicyKind::full_precision:
                ASSERT_EQ(la.payload.dense.size(), lb.payload.dense.size());
                for (std::size_t i = 0; i < la.payload.dense.size(); ++i)
                    EXPECT_EQ(la.payload.dense[i], lb.payload.dense[i]);
                break;
        }
        ASSERT_EQ(la.bias.size(), lb.bias.size());
        for (std::size_t i = 0; i < la.bias.size(); ++i) EXPECT_EQ(la.bias[i], lb.bias[i]);
    }
}

} // namespace

// bytes computed independently: alphabet indices packed LSB-first
TEST(PackCodes, FrozenBitPatterns) {
    const std::vector<std::int8_t> tern = {-1, 0, 1, 1, -1, 0, 1, 0};
    EXPECT_EQ(lowbit::pack_codes(tern, QuantizationSet::ternary()),
              (std::vector<std::uint8_t>{0xa4, 0x64}));

    const std::vector<std::int8_t> bin = {1, -1, -1, 1, 1, 1, -1, 1, 1, -1};
    EXPECT_EQ(lowbit::pack_codes(bin, QuantizationSet::binary()),
              (std::vector<std::uint8_t>{0xb9, 0x01}));

    const std::vector<std::int8_t> p2 = {4, -4, 0, 1, -2, 2, -1};
    EXPECT_EQ(lowbit::pack_codes(p2, QuantizationSet::pow2(2)),
              (std::vector<std::uint8_t>{0xc6, 0x98, 0x0a}));
}

TEST(PackCodes, RoundTripRandomCodes) {
    Rng rng(3);
    for (const char* name : {"binary", "ternary", "pow2:1", "pow2:2"}) {
        const QuantizationSet set = QuantizationSet::parse(name);
        const std::vector<int>& alphabet = set.alphabet();
        for (std::size_t d : {1u, 7u, 8u, 33u}) {
            std::vector<std::int8_t> codes(d);
            for (auto& c : codes)
                c = static_cast<std::int8_t>(
                    alphabet[static_cast<std::size_t>(rng.next_below(alphabet.size()))]);
            const auto bytes = lowbit::pack_codes(codes, set);
            EXPECT_EQ(bytes.size(),
                      (d * static_cast<std::size_t>(set.bits_per_weight()) + 7) / 8);
            EXPECT_EQ(lowbit::unpack_codes(bytes.data(), bytes.size(), d, set), codes);
        }
    }
}

// Pins the canonical header text and payload offsets of the container.
TEST(ModelFile, FrozenLayout) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(2, 3), LayerSpec::softmax_ce()};
    ModelLayer l;
    l.name = "fc0";
    l.payload.kind = PolicyKind::codebook;
    l.payload.q.set = QuantizationSet::ternary();
    l.payload.q.shape = {3, 2};
    l.payload.q.codes = {1, -1, 0, 1, -1, 1};
    l.payload.q.alpha = 0.5;
    l.bias = Tensor({3}, {0.25, -0.5, 1.0});
    m.layers.push_back(std::move(l));

    const std::string bytes = lowbit::save_bytes(m);
    ASSERT_GE(bytes.size(), 16u);
    EXPECT_EQ(bytes.substr(0, 8), "LBADMM01");

    const std::string header_text =
        "{\"architecture\":[{\"bias\":true,\"in\":2,\"kind\":\"fc\",\"out\":3},"
        "{\"kind\":\"softmax_ce\"}],\"layers\":[{\"bias_count\":3,\"name\":\"fc0\","
        "\"payload\":\"codebook\",\"set\":\"ternary\",\"weight_count\":6}],\"version\":1}";
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    ASSERT_EQ(hlen, header_text.size());
    EXPECT_EQ(bytes.substr(16, hlen), header_text);

    const std::size_t payload = 16 + hlen;
    // codes as raw int8
    EXPECT_EQ(static_cast<signed char>(bytes[payload + 0]), 1);
    EXPECT_EQ(static_cast<signed char>(bytes[payload + 1]), -1);
    EXPECT_EQ(static_cast<signed char>(bytes[payload + 2]), 0);
    // alpha 0.5 as little-endian f64
    const unsigned char alpha_le[8] = {0, 0, 0, 0, 0, 0, 0xe0, 0x3f};
    EXPECT_EQ(std::memcmp(bytes.data() + payload + 6, alpha_le, 8), 0);
    // total: magic + length + header + 6 codes + alpha + 3 bias doubles
    EXPECT_EQ(bytes.size(), payload + 6 + 8 + 3 * 8);
}

TEST(ModelFile, SaveLoadRoundTripIsByteIdentical) {
    for (bool packed : {false, true}) {
        const QuantizedModel m = tiny_model(packed);
        const std::string bytes = lowbit::save_bytes(m);
        const QuantizedModel back =
            lowbit::load_bytes(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
        expect_models_equal(m, back);
        EXPECT_EQ(lowbit::save_bytes(back), bytes);
    }
}

TEST(ModelFile, FileRoundTrip) {
    fixtures::TempDir dir("model_io");
    const QuantizedModel m = tiny_model();
    lowbit::save(m, dir.path() + "/model.lbm");
    expect_models_equal(m, lowbit::load(dir.path() + "/model.lbm"));
}

TEST(ModelFile, PackedVariantIsSmaller) {
    const std::string plain = lowbit::save_bytes(tiny_model(false));
    const std::string packed = lowbit::save_bytes(tiny_model(true));
    // fc0 has 24 ternary codes: 24 int8 bytes vs ceil(2*24/8) = 6 packed bytes,
    // minus 7 bytes of longer payload tag ("codebook_packed") in the header
    EXPECT_EQ(plain.size() - packed.size(), (24u - 6u) - 7u);
}

TEST(ModelFile, CorruptionIsRejected) {
    const std::string good = lowbit::save_bytes(tiny_model());
    const auto* p = reinterpret_cast<const std::uint8_t*>(good.data());

    EXPECT_THROW(lowbit::load_bytes(p, good.size() - 1), lowbit::FormatError);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(lowbit::load_bytes(reinterpret_cast<const std::uint8_t*>(bad_magic.data()),
                                    bad_magic.size()),
                 lowbit::FormatError);

    std::string trailing = good + '\0';
    EXPECT_THROW(lowbit::load_bytes(reinterpret_cast<const std::uint8_t*>(trailing.data()),
                                    trailing.size()),
                 lowbit::FormatError);
}

TEST(ModelFile, BadVersionAndBadCodesAreRejected) {
    const std::string good = lowbit::save_bytes(tiny_model());
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(good[8 + i])) << (8 * i);

    // splice in a rewritten header with a foreign version number
    nlohmann::json header = nlohmann::json::parse(good.substr(16, hlen));
    header["version"] = 2;
    const std::string htext = header.dump();
    std::string tampered = good.substr(0, 8);
    for (int i = 0; i < 8; ++i)
        tampered.push_back(static_cast<char>((htext.size() >> (8 * i)) & 0xff));
    tampered += htext;
    tampered += good.substr(16 + hlen);
    EXPECT_THROW(lowbit::load_bytes(reinterpret_cast<const std::uint8_t*>(tampered.data()),
                                    tampered.size()),
                 lowbit::FormatError);

    // first stored code byte set to a level outside the ternary alphabet
    std::string bad_code = good;
    bad_code[16 + hlen] = 3;
    EXPECT_THROW(lowbit::load_bytes(reinterpret_cast<const std::uint8_t*>(bad_code.data()),
                                    bad_code.size()),
                 lowbit::FormatError);
}

TEST(ModelFile, NetworkRoundTrip) {
    Network net = Network::mlp();
    Rng rng(5);
    net.init_weights(rng);
    const QuantizedModel m = lowbit::model_from_network(net);
    const Network back = lowbit::to_network(m);
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        for (std::size_t i = 0; i < net.weights[k].size(); ++i)
            EXPECT_EQ(net.weights[k][i], back.weights[k][i]);
        for (std::size_t i = 0; i < net.biases[k].size(); ++i)
            EXPECT_EQ(net.biases[k][i], back.biases[k][i]);
    }
}

TEST(QuantizedForward, MatchesFloatPathOnMixedModel) {
    // conv pow2:2 / relu / pool / fc ternary / relu / fc int8
    QuantizedModel m;
    m.architecture = {LayerSpec::conv(1, 4, 3, 1, 1), LayerSpec::relu(),
                      LayerSpec::max_pool(2, 2),      LayerSpec::fc(100, 16),
                      LayerSpec::relu(),              LayerSpec::fc(16, 5),
                      LayerSpec::softmax_ce()};
    Rng rng(17);

    ModelLayer conv;
    conv.name = "conv0";
    conv.payload = lowbit::apply_layer_policy(
        random_tensor({4, 1, 3, 3}, rng),
        lowbit::LayerPolicy::codebook(QuantizationSet::pow2(2)));
    conv.bias = random_tensor({4}, rng, 0.1);
    m.layers.push_back(std::move(conv));

    ModelLayer fc0;
    fc0.name = "fc0";
    fc0.payload = lowbit::apply_layer_policy(
        random_tensor({16, 100}, rng),
        lowbit::LayerPolicy::codebook(QuantizationSet::ternary()));
    fc0.bias = random_tensor({16}, rng, 0.1);
    m.layers.push_back(std::move(fc0));

    ModelLayer fc1;
    fc1.name = "fc1";
    fc1.payload = lowbit::apply_layer_policy(random_tensor({5, 16}, rng),
                                             lowbit::LayerPolicy::int8());
    fc1.bias = random_tensor({5}, rng, 0.1);
    m.layers.push_back(std::move(fc1));

    const Network net = lowbit::to_network(m);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor batch = random_tensor({3, 1, 10, 10}, rng);
        const Tensor quant = lowbit::quantized_forward(m, batch);
        const Tensor fl = lowbit::logits(net, batch);
        ASSERT_EQ(quant.shape(), fl.shape());
        for (std::size_t i = 0; i < quant.size(); ++i)
            EXPECT_NEAR(quant[i], fl[i], 1e-9);
    }
}

TEST(QuantizedForward, TernaryAccumulationIsMultiplicationFree) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(8, 4), LayerSpec::softmax_ce()};
    Rng rng(23);
    ModelLayer l;
    l.name = "fc0";
    l.payload = lowbit::apply_layer_policy(
        random_tensor({4, 8}, rng), lowbit::LayerPolicy::codebook(QuantizationSet::ternary()));
    l.bias = random_tensor({4}, rng, 0.1);
    m.layers.push_back(std::move(l));

    lowbit::QuantOpCounts n;
    lowbit::quantized_forward(m, random_tensor({6, 8}, rng), &n);
    EXPECT_EQ(n.acc_mults, 0u);
    EXPECT_EQ(n.acc_shifts, 0u);   // ternary codes are 0 or +/-1: no shifts either
    EXPECT_GT(n.acc_adds, 0u);
    EXPECT_EQ(n.scale_mults, 6u * 4u);  // exactly one alpha multiply per output
    EXPECT_EQ(n.bias_adds, 6u * 4u);
}

TEST(QuantizedForward, PowerOfTwoCodesUseShifts) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(4, 2, /*bias=*/false), LayerSpec::softmax_ce()};
    ModelLayer l;
    l.name = "fc0";
    l.payload.kind = PolicyKind::codebook;
    l.payload.q.set = QuantizationSet::pow2(2);
    l.payload.q.shape = {2, 4};
    l.payload.q.codes = {4, -2, 1, 0, -4, 2, 0, -1};
    l.payload.q.alpha = 0.125;
    m.layers.push_back(std::move(l));

    lowbit::QuantOpCounts n;
    const Tensor batch({1, 4}, {1.0, 2.0, 3.0, 4.0});
    const Tensor y = lowbit::quantized_forward(m, batch, &n);
    // row0: 4*1 - 2*2 + 1*3 + 0 = 3; row1: -4*1 + 2*2 + 0 - 1*4 = -4
    EXPECT_DOUBLE_EQ(y[0], 0.125 * 3.0);
    EXPECT_DOUBLE_EQ(y[1], 0.125 * -4.0);
    EXPECT_EQ(n.acc_mults, 0u);
    EXPECT_EQ(n.acc_shifts, 4u);  // the four |code| >= 2 terms
    EXPECT_EQ(n.scale_mults, 2u);
}

TEST(QuantizedForward, AllZeroCodesAnnihilate) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(4, 3, /*bias=*/false), LayerSpec::softmax_ce()};
    ModelLayer l;
    l.name = "fc0";
    l.payload.kind = PolicyKind::codebook;
    l.payload.q.set = QuantizationSet::ternary();
    l.payload.q.shape = {3, 4};
    l.payload.q.codes.assign(12, 0);
    l.payload.q.alpha = 0.7;
    m.layers.push_back(std::move(l));

    Rng rng(29);
    const Tensor y = lowbit::quantized_forward(m, random_tensor({2, 4}, rng));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(InspectReport, ReportsPackedBits) {
    QuantizedModel m;
    m.architecture = {LayerSpec::fc(16, 1, /*bias=*/false), LayerSpec::softmax_ce()};
    for (const char* name : {"binary", "ternary", "pow2:1", "pow2:2"}) {
        m.layers.clear();
        ModelLayer l;
        l.name = "fc0";
        l.payload.kind = PolicyKind::codebook;
        l.payload.q.set = QuantizationSet::parse(name);
        l.payload.q.shape = {1, 16};
        l.payload.q.codes.assign(16, 1);
        l.payload.q.alpha = 1.0;
        m.layers.push_back(std::move(l));

        const std::string report = lowbit::inspect_report(m);
        const QuantizationSet set = QuantizationSet::parse(name);
        const std::string bits = "bits_per_weight=" + std::to_string(set.bits_per_weight());
        const std::string packed =
            "packed_bytes=" + std::to_string(16 * set.bits_per_weight() / 8 + 8);
        EXPECT_NE(report.find(bits), std::string::npos) << report;
        EXPECT_NE(report.find(packed), std::string::npos) << report;
    }
}
