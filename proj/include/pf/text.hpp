#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pf/dataset.hpp"
#include "pf/tensor.hpp"
#include "pf/unet.hpp"

namespace pf {

// Token ids are dense and stable; PAD = 0, UNK = 1.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> tokens;  // index = id
    std::map<std::string, int> ids;

    static Vocab from_tokens(const std::vector<std::string>& words);
    int id_of(const std::string& token) const;  // UNK fallback
    int size() const { return static_cast<int>(tokens.size()); }
};

// Plain-text serialization: one token per line, line number = id.
void save_vocab(const Vocab& v, const std::string& path);
Vocab load_vocab(const std::string& path);

inline constexpr int kSeqLen = 8;

// Lowercase, whitespace-split, UNK fallback, pad/truncate to `len`.
std::vector<int> tokenize(const std::string& caption, const Vocab& vocab, int len = kSeqLen);

// Per-token embeddings mixed by one linear layer; output L x cond_dim.
// Parameter paths: text.embed, text.mix.weight, text.mix.bias.
ModelParams init_text_encoder(int vocab_size, int cond_dim, std::uint64_t seed);
Tensor encode_text(const std::vector<int>& ids, const ModelParams& params);

// Adds any out-of-vocabulary caption words to the vocab and grows the
// embedding table with fresh random rows (std 0.02). Novel fine-tune
// keywords enter the model this way. Returns the number of added tokens.
int extend_vocab(Vocab& vocab, ModelParams& text_params,
                 const std::vector<std::string>& captions, std::uint64_t seed);

// Symmetric contrastive objective over row-normalized embeddings:
// cross-entropy of the cosine-similarity logits against the diagonal, in
// both directions, averaged.
Tensor clip_contrastive_loss(const Tensor& img_emb, const Tensor& txt_emb, float temperature);

// Toy contrastive demo: small conv image tower + embedding text tower,
// trained on labeled shape panels.
struct ToyClip {
    ModelParams image_tower;  // paths "clip.img.*"
    ModelParams text_tower;   // paths "text.*"
    Vocab vocab;
    int embed_dim = 32;

    Tensor embed_image(const Tensor& img) const;                 // 1x32x32 -> 1 x d
    Tensor embed_caption(const std::string& caption) const;      // -> 1 x d
};

struct ToyClipConfig {
    int steps = 400;
    float lr = 2e-3f;
    float temperature = 0.07f;
    std::uint64_t seed = 0;
};

ToyClip train_toy_clip(const std::vector<ShapePanel>& corpus, const ToyClipConfig& cfg,
                       std::vector<float>* loss_history = nullptr);

}  // namespace pf
