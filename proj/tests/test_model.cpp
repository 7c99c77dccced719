#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "rgf/kernels.hpp"
#include "rgf/model.hpp"
#include "rgf/rng.hpp"

using namespace rgf;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.vocab_size = 20;
    c.max_len = 6;
    c.init_seed = seed;
    return c;
}

TokenSequence make_seq(std::vector<TokenId> tokens, int max_len) {
    TokenSequence s;
    s.n_real = static_cast<int>(tokens.size());
    tokens.resize(static_cast<std::size_t>(max_len), kPadId);
    s.tokens = std::move(tokens);
    return s;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    bool equal = true;
    std::vector<const Matrix*> ta, tb;
    for_each_tensor(a, [&](const std::string&, int, const Matrix& m) { ta.push_back(&m); });
    for_each_tensor(b, [&](const std::string&, int, const Matrix& m) { tb.push_back(&m); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        equal = equal && ta[i]->a == tb[i]->a;
    }
    return equal;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("init_model is seed-deterministic and finite") {
    const auto p1 = init_model(tiny_config(3));
    const auto p2 = init_model(tiny_config(3));
    const auto p3 = init_model(tiny_config(4));
    CHECK(params_equal(p1, p2));
    CHECK_FALSE(params_equal(p1, p3));

    const double bound = 1.0 / std::sqrt(8.0);
    for_each_tensor(p1, [&](const std::string&, int, const Matrix& m) {
        for (double x : m.a) {
            CHECK(std::isfinite(x));
            CHECK(std::abs(x) <= 1.0);  // gains are 1, weights within the bound
        }
    });
    CHECK(std::abs(p1.tok_embed.at(0, 0)) <= bound);
}

TEST_CASE("invalid model shapes are rejected") {
    ModelConfig c = tiny_config();
    c.d_model = 8;
    c.n_heads = 3;
    CHECK_THROWS_AS(init_model(c), Error);
    c = tiny_config();
    c.n_layers = 0;
    CHECK_THROWS_AS(init_model(c), Error);
    c = tiny_config();
    c.max_len = 1;
    CHECK_THROWS_AS(init_model(c), Error);
}

TEST_CASE("forward produces a normalized trace with masked padding") {
    const auto params = init_model(tiny_config(7));
    const auto seq = make_seq({3, 9, 1, 12}, 6);  // two pad positions

    ForwardOptions opts;
    opts.record_hidden = true;
    opts.record_attention = true;
    const auto trace = forward(params, seq, nullptr, opts);

    CHECK(trace.probs[0] + trace.probs[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(trace.hidden.size() == 3);  // embedding + 2 layers
    REQUIRE(trace.attention.size() == 2);

    for (const auto& rec : trace.attention) {
        for (int h = 0; h < rec.n_heads; ++h) {
            for (int q = 0; q < rec.len; ++q) {
                double row_sum = 0.0;
                for (int k = 0; k < rec.len; ++k) {
                    const double p = rec.at(h, q, k);
                    CHECK(p >= 0.0);
                    if (k >= seq.n_real) CHECK(p == 0.0);  // pad keys get no mass
                    row_sum += p;
                }
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }

    SUBCASE("forward is referentially transparent") {
        const auto again = forward(params, seq, nullptr, opts);
        CHECK(again.probs == trace.probs);
        CHECK(again.logits == trace.logits);
        for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
            CHECK(again.hidden[l].a == trace.hidden[l].a);
        }
    }

    SUBCASE("token id out of range is rejected") {
        const auto bad = make_seq({19, 25}, 6);
        CHECK_THROWS_AS(forward(params, bad), Error);
    }
}

TEST_CASE("a sigma-zero intervention leaves the trace identical") {
    const auto params = init_model(tiny_config(11));
    const auto seq = make_seq({2, 5, 8, 11, 14}, 6);

    ForwardOptions opts;
    opts.record_hidden = true;
    const auto clean = forward(params, seq, nullptr, opts);

    Intervention iv;
    iv.corrupt_positions = {0, 2};
    iv.sigma = 0.0;
    iv.noise_seed = 99;
    const auto corrupted = forward(params, seq, &iv, opts);
    CHECK(corrupted.probs == clean.probs);
    for (std::size_t l = 0; l < clean.hidden.size(); ++l) {
        CHECK(corrupted.hidden[l].a == clean.hidden[l].a);
    }
}

TEST_CASE("corruption noise is seed-deterministic and actually corrupts") {
    const auto params = init_model(tiny_config(13));
    const auto seq = make_seq({2, 5, 8}, 6);

    Intervention iv;
    iv.corrupt_positions = {0, 1};
    iv.sigma = 1.0;
    iv.noise_seed = 5;
    const auto a = forward(params, seq, &iv);
    const auto b = forward(params, seq, &iv);
    CHECK(a.probs == b.probs);

    iv.noise_seed = 6;
    const auto c = forward(params, seq, &iv);
    CHECK(a.probs != c.probs);

    const auto clean = forward(params, seq);
    CHECK(a.probs != clean.probs);
}

TEST_CASE("restoration matches a manual two-pass recomputation") {
    const auto params = init_model(tiny_config(17));
    const auto seq = make_seq({1, 4, 7, 10}, 6);
    const int n = seq.n_real;

    ForwardOptions record;
    record.record_hidden = true;
    const auto clean = forward(params, seq, nullptr, record);

    Intervention corrupt;
    corrupt.corrupt_positions = {0, 2};
    corrupt.sigma = 1.0;
    corrupt.noise_seed = 21;
    const auto corrupted = forward(params, seq, &corrupt, record);

    for (int layer = 1; layer <= 2; ++layer) {
        for (int pos = 0; pos < n; ++pos) {
            Intervention restore = corrupt;
            restore.restore = Intervention::Restore{
                layer, pos,
                {clean.hidden[static_cast<std::size_t>(layer)].row(pos),
                 clean.hidden[static_cast<std::size_t>(layer)].row(pos) + 8}};
            const auto restored = forward(params, seq, &restore);

            // manual recomputation: patch the corrupted run's hidden state and
            // re-run the layers above it
            Matrix h = corrupted.hidden[static_cast<std::size_t>(layer)];
            std::memcpy(h.row(pos), clean.hidden[static_cast<std::size_t>(layer)].row(pos),
                        sizeof(double) * 8);
            ForwardScratch scratch;
            Matrix next;
            for (int m = layer + 1; m <= 2; ++m) {
                run_layer(params, m, h, n, next, scratch);
                std::swap(h, next);
            }
            std::array<double, 2> logits{}, probs{};
            readout(params, h, n, logits, probs);
            CHECK(restored.probs[1] == probs[1]);
            CHECK(restored.probs[0] == probs[0]);
        }
    }

    SUBCASE("restoring every position at the last layer recovers the clean probs") {
        Matrix h = corrupted.hidden[2];
        for (int pos = 0; pos < n; ++pos) {
            std::memcpy(h.row(pos), clean.hidden[2].row(pos), sizeof(double) * 8);
        }
        std::array<double, 2> logits{}, probs{};
        readout(params, h, n, logits, probs);
        CHECK(probs[1] == doctest::Approx(clean.probs[1]).epsilon(1e-9));
    }

    SUBCASE("restoring with the clean run's own vector in a clean run is a no-op") {
        Intervention noop;
        noop.restore = Intervention::Restore{
            2, 1, {clean.hidden[2].row(1), clean.hidden[2].row(1) + 8}};
        const auto same = forward(params, seq, &noop);
        CHECK(same.probs == clean.probs);
    }

    SUBCASE("restore layer out of range") {
        Intervention bad = corrupt;
        bad.restore = Intervention::Restore{3, 0, std::vector<double>(8, 0.0)};
        CHECK_THROWS_AS(forward(params, seq, &bad), Error);
    }
}

TEST_CASE("checkpoints round-trip bit-exactly and reject malformed files") {
    const auto params = init_model(tiny_config(23));
    const auto seq = make_seq({2, 3, 5, 7}, 6);
    const auto before = forward(params, seq);

    const std::string path = temp_path("rgf_ckpt_test.rgfm");
    save_checkpoint(params, path);
    const auto loaded = load_checkpoint(path);
    CHECK(params_equal(params, loaded));
    const auto after = forward(loaded, seq);
    CHECK(after.probs == before.probs);
    CHECK(after.logits == before.logits);

    SUBCASE("bad magic") {
        auto bytes = [&]() {
            std::ifstream in(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        }();
        bytes[0] = 'X';
        const std::string bad = temp_path("rgf_ckpt_bad.rgfm");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(bad)),
                             doctest::Contains("bad magic"), Error);
        std::filesystem::remove(bad);
    }
    SUBCASE("unsupported version") {
        auto bytes = [&]() {
            std::ifstream in(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        }();
        const std::uint32_t v = 99;
        std::memcpy(bytes.data() + 4, &v, sizeof(v));
        const std::string bad = temp_path("rgf_ckpt_v99.rgfm");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(bad)),
                             doctest::Contains("unsupported version"), Error);
        std::filesystem::remove(bad);
    }
    SUBCASE("truncated payload") {
        auto bytes = [&]() {
            std::ifstream in(path, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        }();
        bytes.resize(bytes.size() - 64);
        const std::string bad = temp_path("rgf_ckpt_trunc.rgfm");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(static_cast<void>(load_checkpoint(bad)), Error);
        std::filesystem::remove(bad);
    }
    std::filesystem::remove(path);
}
