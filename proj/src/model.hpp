#pragma once

#include <optional>
#include <string>

#include "checkpoint.hpp"
#include "dwt.hpp"
#include "ffc.hpp"
#include "nn.hpp"

namespace dwtnet {

struct ModelConfig {
    int image_size = 32;
    int base_channels = 8;
    int dwt_blocks = 2;  // per site (encoder and decoder each)
    int patch_rate = 2;
    int codebook_size = 64;
    int code_dim = 32;  // must equal 4 * base_channels (bottleneck width)
    int heads = 4;
    double lambda_c = 0.5;
    int knn_k = 8;
    double ffc_global_ratio = 0.5;
    bool decoder_noise = false;  // diagonal-covariance noise on the latent grid
    std::uint64_t seed = 1;

    void validate() const;      // throws ConfigError
    int latent_grid() const { return image_size / 8; }
    int dwt_site() const { return image_size / 4; }
    int bottleneck_channels() const { return 4 * base_channels; }
};

struct MaskSpec {
    enum class Kind { Center, RandomRects };
    Kind kind = Kind::Center;
    double coverage = 0.25;  // target fraction of missing pixels (random-rects)

    static MaskSpec parse(const std::string& text);  // "center" | "rects:F"
    std::string str() const;
};

// 1 x H x W binary mask, 1 = observed, 0 = missing. Center masks cover the
// centered (H/2)x(W/2) square; random-rects accumulates rectangles until the
// coverage is within +-0.05 of the target. Deterministic given the seed.
Tensor make_mask(const MaskSpec& spec, int h, int w, std::uint64_t seed);
double mask_coverage(const Tensor& m);

// k x c latent vectors updated by an exponential moving average of the
// features assigned to each code (no gradient path into the codebook).
struct Codebook {
    Tensor vectors;  // k x c
    Tensor usage;    // k, lookup counts
    Tensor ema_count;
    Tensor ema_sum;  // k x c
    double decay = 0.99;

    Codebook() = default;
    Codebook(int k, int c, Rng& rng);
    int size() const { return vectors.extent(0); }
    int dim() const { return vectors.extent(1); }

    // nearest codeword per row, ties toward the lower index
    std::vector<int> nearest(const Tensor& f) const;
    void ema_update(const Tensor& f, const std::vector<int>& idx);
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct QuantizeResult {
    std::vector<int> indices;
    Tensor quantized;  // N x c selected codewords (constant w.r.t. the tape)
    Tensor ste;        // f + stopgrad(q - f): gradients pass straight through
    Tensor commit;     // scalar sum ||stopgrad(q) - f||^2 / N
};
QuantizeResult quantize(Tape* tp, const Tensor& f, Codebook& cb);

// Masked-language prior over the token-index grid: a small causal attention
// stack where masked positions carry a learned MASK embedding. Trained on
// the cross-entropy of the true codes at the masked positions; sampling
// fills them autoregressively in raster order.
struct MalPrior {
    int codebook_size = 0;
    int positions = 0;
    int embed = 32;
    int heads = 2;

    Tensor embeddings;  // (k+1) x e, last row is the MASK symbol
    Tensor pos_embed;   // N x e
    struct Block {
        std::vector<Linear> w_q, w_k, w_v;
        Linear out_proj, mlp_in, mlp_out;
    };
    std::vector<Block> blocks;
    Linear head;  // e -> k, zero-initialized so untrained logits are uniform

    MalPrior() = default;
    MalPrior(int codebook_size, int positions, int embed, int heads, int depth, Rng& rng);

    Tensor logits(Tape* tp, const std::vector<int>& tokens,
                  const std::vector<bool>& masked) const;  // N x k
    Tensor loss(Tape* tp, const std::vector<int>& indices, const std::vector<int>& pi) const;
    std::vector<int> sample(const std::vector<int>& indices, const std::vector<int>& pi,
                            double temperature, Rng& rng) const;
    std::vector<Tensor> params() const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct ResBlockDown {
    Conv2d conv1, conv2, skip;
    ResBlockDown() = default;
    ResBlockDown(int cin, int cout, Rng& rng);
    Tensor forward(Tape* tp, const Tensor& x) const;  // halves the extent
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct ResBlockUp {
    Conv2d conv1, conv2, skip;
    ResBlockUp() = default;
    ResBlockUp(int cin, int cout, Rng& rng);
    Tensor forward(Tape* tp, const Tensor& x) const;  // doubles the extent
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// The assembled inpainting model. Encoder: stem conv, two downsampling
// residual blocks, a DWT stack, one further downsampling block to the latent
// grid. Decoder mirrors it with upsampling blocks, a DWT stack and Res-FFC
// skip fusion at each resolution, ending in a 3x3 conv + tanh.
class DwtNetModel {
   public:
    explicit DwtNetModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    struct Encoded {
        Tensor tokens;  // N x c latent tokens
        Tensor skip8, skip16, skip32;
    };
    // x_in: (3+1) x S x S — masked image plus the mask as a fourth channel
    Encoded encode(Tape* tp, const Tensor& x_in) const;
    Tensor decode(Tape* tp, const Tensor& latent_tokens, const Encoded& skips,
                  Rng* noise_rng) const;  // 3 x S x S in (-1, 1)

    struct TrainForward {
        Tensor prediction;
        QuantizeResult q;
        Encoded enc;
    };
    TrainForward forward_train(Tape* tp, const Tensor& image_pm1, const Tensor& mask,
                               Rng* noise_rng);

    // token grid cells whose pixel block overlaps any missing pixel
    std::vector<int> masked_token_positions(const Tensor& mask) const;

    // encode -> quantize -> prior fill -> decode -> composite. Observed
    // pixels of the output equal the input exactly.
    Tensor inpaint(const Tensor& x_m_pm1, const Tensor& mask, double temperature, Rng& rng);

    std::vector<Tensor> generator_params() const;
    std::vector<Tensor> prior_params() const { return prior_.params(); }
    std::vector<Tensor> rescalable_conv_weights() const;
    NamedTensors named_tensors() const;  // everything, checkpoint order

    void save(const std::string& path) const;
    void load(const std::string& path);

    Codebook& codebook() { return codebook_; }
    MalPrior& prior() { return prior_; }
    long parameter_count() const;

   private:
    ModelConfig cfg_;
    Conv2d stem_;                     // 4 -> ch
    ResBlockDown down1_, down2_, down3_;
    std::vector<DwtBlock> enc_dwt_, dec_dwt_;
    ResBlockUp up1_, up2_, up3_;
    ResFfc fuse8_, fuse16_, fuse32_;
    Conv2d out_conv_;                 // ch -> 3
    Tensor noise_log_sigma_;          // bottleneck channels
    Codebook codebook_;
    MalPrior prior_;
};

// composite m*x + (1-m)*y with a 1 x H x W binary mask broadcast over RGB
Tensor composite_by_mask(Tape* tp, const Tensor& mask, const Tensor& observed,
                         const Tensor& filled);
Tensor broadcast_mask3(Tape* tp, const Tensor& mask);

}  // namespace dwtnet
