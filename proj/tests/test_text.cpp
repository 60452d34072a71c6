#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "pf/dataset.hpp"
#include "pf/error.hpp"
#include "pf/gradcheck.hpp"
#include "pf/image.hpp"
#include "pf/ops.hpp"
#include "pf/rng.hpp"
#include "pf/text.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

Vocab test_vocab() { return Vocab::from_tokens({"cnh3000", "circle", "square", "style"}); }

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.mutable_data()) v = scale * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
    return t;
}

}  // namespace

TEST_CASE("tokenize: keyword collapses to one id plus padding") {
    Vocab v = test_vocab();
    const std::vector<int> ids = tokenize("CNH3000", v);
    REQUIRE(ids.size() == 8);
    CHECK(ids[0] == v.id_of("cnh3000"));
    CHECK(ids[0] >= 2);  // dense id above pad/unk
    for (std::size_t i = 1; i < 8; ++i) CHECK(ids[i] == Vocab::kPad);
}

TEST_CASE("tokenize: empty input, unknown words, truncation") {
    Vocab v = test_vocab();
    for (int id : tokenize("", v)) CHECK(id == Vocab::kPad);
    CHECK(tokenize("anachronism", v)[0] == Vocab::kUnk);
    const auto long_ids = tokenize("circle square circle square circle square circle square circle", v);
    REQUIRE(long_ids.size() == 8);
    for (int id : long_ids) CHECK(id != Vocab::kPad);
    CHECK(tokenize("CIRCLE Circle", v)[0] == v.id_of("circle"));
}

TEST_CASE("tokenize of in-vocab captions inverts up to padding") {
    Vocab v = test_vocab();
    const std::string caption = "circle style cnh3000";
    const auto ids = tokenize(caption, v);
    std::string rebuilt;
    for (int id : ids) {
        if (id == Vocab::kPad) continue;
        if (!rebuilt.empty()) rebuilt += " ";
        rebuilt += v.tokens[static_cast<std::size_t>(id)];
    }
    CHECK(rebuilt == caption);
}

TEST_CASE("vocab save/load keeps ids dense and stable") {
    const fs::path dir = fs::temp_directory_path() / "pf_test_text";
    fs::create_directories(dir);
    Vocab v = test_vocab();
    const std::string path = (dir / "vocab.txt").string();
    save_vocab(v, path);
    Vocab w = load_vocab(path);
    REQUIRE(w.tokens == v.tokens);
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        CHECK(w.id_of(v.tokens[i]) == static_cast<int>(i));
}

TEST_CASE("encode_text: deterministic, correct shape, differentiable table") {
    Vocab v = test_vocab();
    ModelParams enc = init_text_encoder(v.size(), 16, 5);
    const auto ids = tokenize("circle cnh3000", v);
    Tensor a = encode_text(ids, enc);
    Tensor b = encode_text(ids, enc);
    REQUIRE(a.shape() == std::vector<int>{8, 16});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);

    Rng rng(6);
    Tensor weights = random_tensor({8, 16}, rng);
    Tensor table0 = enc.at("text.embed").detach();
    Tensor mix_w = enc.at("text.mix.weight");
    Tensor mix_b = enc.at("text.mix.bias");
    Tensor base;
    {
        NoGradGuard ng;
        base = linear(embed(ids, table0), mix_w, mix_b).detach();
    }
    const double err = grad_check(
        [&](const Tensor& t) {
            return sum(mul(sub(linear(embed(ids, t), mix_w, mix_b), base), weights));
        },
        table0, 1e-2);
    CHECK(err <= 1e-3);
}

TEST_CASE("extend_vocab grows the table and keeps old rows intact") {
    Vocab v = test_vocab();
    ModelParams enc = init_text_encoder(v.size(), 16, 5);
    Tensor before = enc.at("text.embed").detach();
    const int added = extend_vocab(v, enc, {"brand NEW tokens", "new again"}, 99);
    CHECK(added == 4);  // brand, new, tokens, again
    CHECK(v.id_of("new") >= 2);
    const Tensor& after = enc.at("text.embed");
    REQUIRE(after.dim(0) == before.dim(0) + 4);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after.data()[i] == before.data()[i]);
}

TEST_CASE("clip loss: perfect alignment at small temperature approaches zero") {
    // orthonormal rows: identity similarity matrix
    Tensor eye = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.mutable_data()[static_cast<std::size_t>(i) * 4 + i] = 1.0f;
    Tensor loss = clip_contrastive_loss(eye, eye, 0.01f);
    CHECK(loss.item() >= 0.0f);
    CHECK(loss.item() <= 1e-6f);
}

TEST_CASE("clip loss: uniform logits give exactly ln N") {
    // identical rows: every cosine similarity is 1
    Tensor ones = Tensor::full({2, 6}, 0.7f);
    Tensor loss = clip_contrastive_loss(ones, ones, 0.07f);
    CHECK(std::fabs(loss.item() - std::log(2.0)) <= 1e-6);

    Tensor ones4 = Tensor::full({4, 6}, -0.3f);
    Tensor loss4 = clip_contrastive_loss(ones4, ones4, 0.5f);
    CHECK(std::fabs(loss4.item() - std::log(4.0)) <= 1e-6);
}

TEST_CASE("clip loss matches a 64-bit direct evaluation") {
    Rng rng(7);
    Tensor img = random_tensor({5, 12}, rng);
    Tensor txt = random_tensor({5, 12}, rng);
    const float temp = 0.07f;
    Tensor loss = clip_contrastive_loss(img, txt, temp);

    // oracle: normalize, similarity matrix, symmetric cross-entropy in double
    auto normalize = [](const Tensor& m) {
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < m.dim(0); ++i) {
            std::vector<double> r(static_cast<std::size_t>(m.dim(1)));
            double n2 = 0.0;
            for (int j = 0; j < m.dim(1); ++j) {
                r[static_cast<std::size_t>(j)] = m.data()[static_cast<std::size_t>(i) * m.dim(1) + j];
                n2 += r[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(j)];
            }
            for (auto& x : r) x /= std::sqrt(n2);
            rows.push_back(std::move(r));
        }
        return rows;
    };
    const auto a = normalize(img), b = normalize(txt);
    double logits[5][5];
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            double dot = 0.0;
            for (int d = 0; d < 12; ++d)
                dot += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] *
                       b[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
            logits[i][j] = dot / temp;
        }
    auto ce_rows = [&](bool transpose) {
        double total = 0.0;
        for (int i = 0; i < 5; ++i) {
            double mx = -1e300;
            for (int j = 0; j < 5; ++j) mx = std::max(mx, transpose ? logits[j][i] : logits[i][j]);
            double se = 0.0;
            for (int j = 0; j < 5; ++j) se += std::exp((transpose ? logits[j][i] : logits[i][j]) - mx);
            total += mx + std::log(se) - logits[i][i];
        }
        return total / 5.0;
    };
    const double want = 0.5 * (ce_rows(false) + ce_rows(true));
    CHECK(loss.item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("clip loss is permutation-equivariant") {
    Rng rng(8);
    Tensor img = random_tensor({6, 10}, rng);
    Tensor txt = random_tensor({6, 10}, rng);
    const float before = clip_contrastive_loss(img, txt, 0.07f).item();

    const int perm[6] = {3, 0, 5, 1, 4, 2};
    Tensor img_p = Tensor::zeros({6, 10});
    Tensor txt_p = Tensor::zeros({6, 10});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 10; ++j) {
            img_p.mutable_data()[static_cast<std::size_t>(i) * 10 + j] =
                img.data()[static_cast<std::size_t>(perm[i]) * 10 + j];
            txt_p.mutable_data()[static_cast<std::size_t>(i) * 10 + j] =
                txt.data()[static_cast<std::size_t>(perm[i]) * 10 + j];
        }
    const float after = clip_contrastive_loss(img_p, txt_p, 0.07f).item();
    CHECK(std::fabs(before - after) <= 1e-6f);
}

TEST_CASE("clip loss rejects zero-norm rows and bad arguments") {
    Tensor bad = Tensor::zeros({3, 4});
    bad.mutable_data()[0] = 1.0f;  // rows 1 and 2 stay zero
    Tensor good = Tensor::full({3, 4}, 0.5f);
    CHECK_THROWS_AS(clip_contrastive_loss(bad, good, 0.07f), NumericError);
    CHECK_THROWS_AS(clip_contrastive_loss(good, good, 0.0f), ConfigError);
    CHECK_THROWS_AS(clip_contrastive_loss(Tensor::full({1, 4}, 1.0f), Tensor::full({1, 4}, 1.0f), 0.07f),
                    DimensionError);
}

TEST_CASE("toy clip: held-out retrieval@1 >= 0.8, matched sims dominate, loss drops") {
    auto corpus = generate_shape_panels(160, 20250807);
    ToyClipConfig cfg;
    cfg.steps = 350;
    cfg.lr = 2e-3f;
    cfg.seed = 41;
    std::vector<float> losses;
    ToyClip clip = train_toy_clip(corpus, cfg, &losses);

    REQUIRE_FALSE(losses.empty());
    CHECK(losses.back() < losses.front());

    auto held_out = generate_shape_panels(40, 777001);
    NoGradGuard ng;
    std::vector<Tensor> caption_embs;
    for (const auto& name : shape_class_names())
        caption_embs.push_back(clip.embed_caption(name));

    int hits = 0;
    double matched = 0.0, mismatched = 0.0;
    int matched_n = 0, mismatched_n = 0;
    for (const auto& panel : held_out) {
        Tensor emb = clip.embed_image(image_to_tensor(panel.image, 1));
        int best = -1;
        double best_sim = -2.0;
        for (std::size_t c = 0; c < caption_embs.size(); ++c) {
            const double sim = cosine_sim(emb, caption_embs[c]).item();
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(c);
            }
            if (static_cast<int>(c) == panel.label) {
                matched += sim;
                ++matched_n;
            } else {
                mismatched += sim;
                ++mismatched_n;
            }
        }
        if (best == panel.label) ++hits;
    }
    const double retrieval = static_cast<double>(hits) / static_cast<double>(held_out.size());
    CHECK(retrieval >= 0.8);
    CHECK(matched / matched_n > mismatched / mismatched_n);
}
