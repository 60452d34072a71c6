#include "pf/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "pf/adam.hpp"
#include "pf/error.hpp"
#include "pf/image.hpp"
#include "pf/ops.hpp"
#include "pf/rng.hpp"

namespace pf {

Vocab Vocab::from_tokens(const std::vector<std::string>& words) {
    Vocab v;
    v.tokens = {"<pad>", "<unk>"};
    for (const auto& w : words) {
        std::string lower = w;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (std::find(v.tokens.begin(), v.tokens.end(), lower) == v.tokens.end())
            v.tokens.push_back(lower);
    }
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        v.ids[v.tokens[i]] = static_cast<int>(i);
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnk : it->second;
}

void save_vocab(const Vocab& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_vocab: cannot open " + path);
    for (const auto& t : v.tokens) out << t << "\n";
    if (!out) throw IoError("save_vocab: short write to " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_vocab: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.tokens.push_back(line);
    }
    if (v.tokens.size() < 2 || v.tokens[0] != "<pad>" || v.tokens[1] != "<unk>")
        throw IntegrityError("load_vocab: missing pad/unk header tokens in " + path);
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        v.ids[v.tokens[i]] = static_cast<int>(i);
    return v;
}

std::vector<int> tokenize(const std::string& caption, const Vocab& vocab, int len) {
    if (len < 1) throw ConfigError("tokenize: len must be positive");
    std::string lower = caption;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream stream(lower);
    std::vector<int> out;
    std::string word;
    while (stream >> word && static_cast<int>(out.size()) < len)
        out.push_back(vocab.id_of(word));
    out.resize(static_cast<std::size_t>(len), Vocab::kPad);
    return out;
}

ModelParams init_text_encoder(int vocab_size, int cond_dim, std::uint64_t seed) {
    if (vocab_size < 2 || cond_dim < 1) throw ConfigError("init_text_encoder: bad sizes");
    Rng rng(seed);
    ModelParams p;
    Tensor table = Tensor::zeros({vocab_size, cond_dim});
    for (float& v : table.mutable_data()) v = static_cast<float>(rng.normal()) * 0.02f;
    p.tensors.emplace("text.embed", std::move(table));
    // identity plus noise keeps token identity flowing from step zero
    Tensor mix = Tensor::zeros({cond_dim, cond_dim});
    for (int i = 0; i < cond_dim; ++i)
        for (int j = 0; j < cond_dim; ++j)
            mix.mutable_data()[static_cast<std::size_t>(i) * cond_dim + j] =
                (i == j ? 1.0f : 0.0f) + static_cast<float>(rng.normal()) * 0.02f;
    p.tensors.emplace("text.mix.weight", std::move(mix));
    p.tensors.emplace("text.mix.bias", Tensor::zeros({cond_dim}));
    return p;
}

Tensor encode_text(const std::vector<int>& ids, const ModelParams& params) {
    Tensor emb = embed(ids, params.at("text.embed"));
    return linear(emb, params.at("text.mix.weight"), params.at("text.mix.bias"));
}

int extend_vocab(Vocab& vocab, ModelParams& text_params,
                 const std::vector<std::string>& captions, std::uint64_t seed) {
    std::vector<std::string> fresh;
    for (const auto& caption : captions) {
        std::string lower = caption;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        std::istringstream stream(lower);
        std::string word;
        while (stream >> word) {
            if (vocab.ids.count(word) == 0 &&
                std::find(fresh.begin(), fresh.end(), word) == fresh.end())
                fresh.push_back(word);
        }
    }
    if (fresh.empty()) return 0;

    Tensor& table = text_params.at("text.embed");
    const int d = table.dim(1);
    const bool rg = table.requires_grad();
    std::vector<float> values(table.data().begin(), table.data().end());
    // new rows enter at the table's own scale, like any trained-vocabulary
    // token the model has never seen in this role
    double rms = 0.0;
    for (float v : values) rms += static_cast<double>(v) * v;
    rms = std::sqrt(rms / static_cast<double>(values.size()));
    const float scale = std::max(0.02f, static_cast<float>(rms));
    Rng rng(seed);
    for (const auto& word : fresh) {
        vocab.ids[word] = vocab.size();
        vocab.tokens.push_back(word);
        for (int j = 0; j < d; ++j) values.push_back(static_cast<float>(rng.normal()) * scale);
    }
    table = Tensor::from_data({vocab.size(), d}, std::move(values), rg);
    return static_cast<int>(fresh.size());
}

Tensor clip_contrastive_loss(const Tensor& img_emb, const Tensor& txt_emb, float temperature) {
    if (img_emb.ndim() != 2 || txt_emb.ndim() != 2 || img_emb.shape() != txt_emb.shape())
        throw DimensionError("clip_contrastive_loss: towers must agree, got " +
                             shape_str(img_emb.shape()) + " vs " + shape_str(txt_emb.shape()));
    if (img_emb.dim(0) < 2) throw DimensionError("clip_contrastive_loss: need N >= 2");
    if (!(temperature > 0.0f)) throw ConfigError("clip_contrastive_loss: temperature must be > 0");

    Tensor img_n = row_normalize(img_emb);
    Tensor txt_n = row_normalize(txt_emb);
    Tensor logits = scale(matmul_nt(img_n, txt_n), 1.0f / temperature);
    Tensor loss_i2t = diagonal_nll(logits);
    Tensor loss_t2i = diagonal_nll(transpose2d(logits));
    return scale(add(loss_i2t, loss_t2i), 0.5f);
}

namespace {

float trunc_normal(Rng& rng, float std_dev) {
    for (;;) {
        const double v = rng.normal();
        if (std::fabs(v) <= 2.0) return static_cast<float>(v) * std_dev;
    }
}

Tensor init_weight(std::vector<int> shape, Rng& rng, float std_dev = 0.05f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.mutable_data()) v = trunc_normal(rng, std_dev);
    return t;
}

ModelParams init_image_tower(int embed_dim, Rng& rng) {
    ModelParams p;
    p.tensors.emplace("clip.img.conv1.weight", init_weight({8, 1, 3, 3}, rng));
    p.tensors.emplace("clip.img.conv1.bias", Tensor::zeros({8}));
    p.tensors.emplace("clip.img.conv2.weight", init_weight({16, 8, 3, 3}, rng));
    p.tensors.emplace("clip.img.conv2.bias", Tensor::zeros({16}));
    p.tensors.emplace("clip.img.conv3.weight", init_weight({16, 16, 3, 3}, rng));
    p.tensors.emplace("clip.img.conv3.bias", Tensor::zeros({16}));
    p.tensors.emplace("clip.img.fc.weight", init_weight({embed_dim, 16 * 4 * 4}, rng));
    p.tensors.emplace("clip.img.fc.bias", Tensor::zeros({embed_dim}));
    return p;
}

Tensor image_tower_forward(const ModelParams& p, const Tensor& img) {
    Tensor h = silu(conv2d(img, p.at("clip.img.conv1.weight"), p.at("clip.img.conv1.bias"), 1, 1));
    h = avgpool2(h);  // 16
    h = silu(conv2d(h, p.at("clip.img.conv2.weight"), p.at("clip.img.conv2.bias"), 1, 1));
    h = avgpool2(h);  // 8
    h = silu(conv2d(h, p.at("clip.img.conv3.weight"), p.at("clip.img.conv3.bias"), 1, 1));
    h = avgpool2(h);  // 4
    Tensor flat = reshape(h, {1, 16 * 4 * 4});
    return linear(flat, p.at("clip.img.fc.weight"), p.at("clip.img.fc.bias"));
}

Tensor pooled_caption(const ModelParams& text_params, const Vocab& vocab,
                      const std::string& caption) {
    const std::vector<int> ids = tokenize(caption, vocab);
    Tensor per_token = encode_text(ids, text_params);  // L x d
    Tensor pool = Tensor::full({1, static_cast<int>(ids.size())},
                               1.0f / static_cast<float>(ids.size()));
    return matmul(pool, per_token);  // 1 x d
}

}  // namespace

Tensor ToyClip::embed_image(const Tensor& img) const { return image_tower_forward(image_tower, img); }

Tensor ToyClip::embed_caption(const std::string& caption) const {
    return pooled_caption(text_tower, vocab, caption);
}

ToyClip train_toy_clip(const std::vector<ShapePanel>& corpus, const ToyClipConfig& cfg,
                       std::vector<float>* loss_history) {
    if (corpus.empty()) throw ConfigError("train_toy_clip: empty corpus");
    const int n_classes = static_cast<int>(shape_class_names().size());
    std::vector<std::vector<const ShapePanel*>> by_class(static_cast<std::size_t>(n_classes));
    for (const auto& p : corpus) by_class[static_cast<std::size_t>(p.label)].push_back(&p);
    for (int c = 0; c < n_classes; ++c) {
        if (by_class[static_cast<std::size_t>(c)].empty())
            throw ConfigError("train_toy_clip: class " + shape_class_names()[c] + " has no panels");
    }

    ToyClip clip;
    clip.vocab = Vocab::from_tokens(shape_class_names());
    Rng rng(cfg.seed);
    clip.image_tower = init_image_tower(clip.embed_dim, rng);
    clip.text_tower = init_text_encoder(clip.vocab.size(), clip.embed_dim, rng.next_u64());
    clip.image_tower.set_requires_grad(true);
    clip.text_tower.set_requires_grad(true);

    AdamOptimizer opt_img, opt_txt;
    for (int step = 0; step < cfg.steps; ++step) {
        // one panel per class per batch: every row has in-batch negatives
        std::vector<Tensor> img_rows, txt_rows;
        for (int c = 0; c < n_classes; ++c) {
            const auto& bucket = by_class[static_cast<std::size_t>(c)];
            const ShapePanel* panel = bucket[rng.uniform_below(bucket.size())];
            img_rows.push_back(
                image_tower_forward(clip.image_tower, image_to_tensor(panel->image, 1)));
            txt_rows.push_back(
                pooled_caption(clip.text_tower, clip.vocab, shape_class_names()[c]));
        }
        Tensor loss = clip_contrastive_loss(stack_rows(img_rows), stack_rows(txt_rows),
                                            cfg.temperature);
        if (loss_history != nullptr) loss_history->push_back(loss.item());
        backward(loss);
        opt_img.step(clip.image_tower.tensors, cfg.lr);
        opt_txt.step(clip.text_tower.tensors, cfg.lr);
    }
    return clip;
}

}  // namespace pf
