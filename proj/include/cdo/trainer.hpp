#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cdo/errors.hpp"
#include "cdo/forward.hpp"
#include "cdo/grad.hpp"
#include "cdo/lanesynth.hpp"
#include "cdo/matrix.hpp"
#include "cdo/rng.hpp"

namespace cdo {

// A deliberately small segmentation network, trained with hand-written
// backpropagation: two stride-2 3x3 convolutions (so a HxW image yields an
// N_slots x H/4 x W/4 feature map F), a sigmoid per-pixel segmentation head
// on F, a per-slot existence head on the spatial means of F, and the
// covariance loss attached to F itself (pre-sigmoid). Inference never
// touches the covariance path.

/// Records the operations executed along a forward/decode path; used to
/// verify that inference stays free of training-only computation.
struct OpTrace {
    std::vector<std::string> ops;
    void record(std::string_view op) { ops.emplace_back(op); }
};

/// Weights of the toy model. The same struct doubles as a gradient
/// container since every field has matching shape.
struct ToyModel {
    int hidden = 8;  // conv1 output channels
    int slots = 4;   // conv2 output channels == lane slots
    std::vector<double> conv1_w;  // hidden x 1 x 3 x 3
    std::vector<double> conv1_b;  // hidden
    std::vector<double> conv2_w;  // slots x hidden x 3 x 3
    std::vector<double> conv2_b;  // slots
    std::vector<double> exist_gain;  // slots
    std::vector<double> exist_bias;  // slots

    static ToyModel zeros(int hidden, int slots) {
        if (hidden <= 0 || slots <= 0) throw ParamError("ToyModel: sizes must be positive");
        ToyModel m;
        m.hidden = hidden;
        m.slots = slots;
        m.conv1_w.assign(static_cast<std::size_t>(hidden) * 9, 0.0);
        m.conv1_b.assign(static_cast<std::size_t>(hidden), 0.0);
        m.conv2_w.assign(static_cast<std::size_t>(slots) * hidden * 9, 0.0);
        m.conv2_b.assign(static_cast<std::size_t>(slots), 0.0);
        m.exist_gain.assign(static_cast<std::size_t>(slots), 0.0);
        m.exist_bias.assign(static_cast<std::size_t>(slots), 0.0);
        return m;
    }

    /// Uniform(-r, r) conv weights with r = 1/sqrt(fan_in), zero biases,
    /// unit existence gains.
    static ToyModel random_init(int hidden, int slots, SeededRng& rng) {
        ToyModel m = zeros(hidden, slots);
        const double r1 = 1.0 / 3.0;                       // fan_in 9
        const double r2 = 1.0 / std::sqrt(9.0 * hidden);   // fan_in 9*hidden
        for (double& w : m.conv1_w) w = rng.uniform(-r1, r1);
        for (double& w : m.conv2_w) w = rng.uniform(-r2, r2);
        std::fill(m.exist_gain.begin(), m.exist_gain.end(), 1.0);
        return m;
    }

    std::size_t parameter_count() const {
        return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() +
               exist_gain.size() + exist_bias.size();
    }

    std::array<std::span<double>, 6> parameter_blocks() {
        return {std::span<double>(conv1_w), std::span<double>(conv1_b),
                std::span<double>(conv2_w), std::span<double>(conv2_b),
                std::span<double>(exist_gain), std::span<double>(exist_bias)};
    }
    std::array<std::span<const double>, 6> parameter_blocks() const {
        return {std::span<const double>(conv1_w), std::span<const double>(conv1_b),
                std::span<const double>(conv2_w), std::span<const double>(conv2_b),
                std::span<const double>(exist_gain), std::span<const double>(exist_bias)};
    }
};

namespace detail {

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Numerically stable binary cross-entropy from the logit.
inline double bce_from_logit(double z, double target) {
    return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::fabs(z)));
}

/// 3x3 convolution, stride 2, zero padding 1: out(o,i,j) covers input rows
/// 2i-1..2i+1. Input dims must be even.
inline Tensor3 conv3x3_s2(const Tensor3& in, std::span<const double> w,
                          std::span<const double> b, int out_ch) {
    const int in_ch = in.channels(), h = in.height(), wd = in.width();
    if (h % 2 != 0 || wd % 2 != 0) {
        throw ShapeError("conv3x3_s2: input dims must be even");
    }
    const int oh = h / 2, ow = wd / 2;
    Tensor3 out(out_ch, oh, ow);
    for (int o = 0; o < out_ch; ++o) {
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = b[static_cast<std::size_t>(o)];
                for (int c = 0; c < in_ch; ++c) {
                    const std::size_t wbase = ((static_cast<std::size_t>(o) * in_ch) + c) * 9;
                    for (int a = 0; a < 3; ++a) {
                        const int y = 2 * i + a - 1;
                        if (y < 0 || y >= h) continue;
                        for (int bb = 0; bb < 3; ++bb) {
                            const int x = 2 * j + bb - 1;
                            if (x < 0 || x >= wd) continue;
                            acc += w[wbase + static_cast<std::size_t>(a) * 3 + bb] * in(c, y, x);
                        }
                    }
                }
                out(o, i, j) = acc;
            }
        }
    }
    return out;
}

/// Backward pass of conv3x3_s2: fills d_in (same shape as in), d_w, d_b.
inline void conv3x3_s2_backward(const Tensor3& in, std::span<const double> w,
                                const Tensor3& d_out, Tensor3& d_in, std::span<double> d_w,
                                std::span<double> d_b) {
    const int in_ch = in.channels(), h = in.height(), wd = in.width();
    const int out_ch = d_out.channels(), oh = d_out.height(), ow = d_out.width();
    for (double& v : d_in.data()) v = 0.0;
    for (int o = 0; o < out_ch; ++o) {
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                const double g = d_out(o, i, j);
                d_b[static_cast<std::size_t>(o)] += g;
                for (int c = 0; c < in_ch; ++c) {
                    const std::size_t wbase = ((static_cast<std::size_t>(o) * in_ch) + c) * 9;
                    for (int a = 0; a < 3; ++a) {
                        const int y = 2 * i + a - 1;
                        if (y < 0 || y >= h) continue;
                        for (int bb = 0; bb < 3; ++bb) {
                            const int x = 2 * j + bb - 1;
                            if (x < 0 || x >= wd) continue;
                            const std::size_t wi = wbase + static_cast<std::size_t>(a) * 3 + bb;
                            d_w[wi] += g * in(c, y, x);
                            d_in(c, y, x) += g * w[wi];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

struct ForwardResult {
    Tensor3 hidden_pre;  // conv1 output before ReLU
    Tensor3 hidden;      // after ReLU
    Tensor3 feature;     // F: conv2 output, the covariance loss attaches here
    Tensor3 seg_probs;   // sigmoid(F)
    std::vector<double> exist_logits;
    std::vector<double> exist_probs;
};

/// Forward pass. Image dims must be divisible by 4 (two stride-2 convs).
inline ForwardResult forward(const ToyModel& model, const Matrix& image,
                             OpTrace* trace = nullptr) {
    if (image.rows() % 4 != 0 || image.cols() % 4 != 0) {
        throw ShapeError("forward: image dims must be divisible by 4");
    }
    Tensor3 input(1, image.rows(), image.cols());
    input.set_channel(0, image);

    ForwardResult out;
    out.hidden_pre = detail::conv3x3_s2(input, model.conv1_w, model.conv1_b, model.hidden);
    if (trace) trace->record("conv3x3_s2");
    out.hidden = out.hidden_pre;
    for (double& v : out.hidden.data()) v = std::max(v, 0.0);
    if (trace) trace->record("relu");
    out.feature = detail::conv3x3_s2(out.hidden, model.conv2_w, model.conv2_b, model.slots);
    if (trace) trace->record("conv3x3_s2");

    out.seg_probs = out.feature;
    for (double& v : out.seg_probs.data()) v = detail::sigmoid(v);
    if (trace) trace->record("sigmoid_seg");

    const int hw = out.feature.height() * out.feature.width();
    out.exist_logits.resize(static_cast<std::size_t>(model.slots));
    out.exist_probs.resize(static_cast<std::size_t>(model.slots));
    for (int n = 0; n < model.slots; ++n) {
        double mean = 0.0;
        for (int i = 0; i < out.feature.height(); ++i) {
            for (int j = 0; j < out.feature.width(); ++j) mean += out.feature(n, i, j);
        }
        mean /= static_cast<double>(hw);
        const double logit = model.exist_gain[static_cast<std::size_t>(n)] * mean +
                             model.exist_bias[static_cast<std::size_t>(n)];
        out.exist_logits[static_cast<std::size_t>(n)] = logit;
        out.exist_probs[static_cast<std::size_t>(n)] = detail::sigmoid(logit);
    }
    if (trace) trace->record("exist_head");
    return out;
}

/// Coefficients of the composite training loss
/// f_seg * L_seg + f_exist * L_exist + f_cdo * L_cdo.
struct LossConfig {
    double f_seg = 1.0;
    double f_exist = 0.1;
    double f_cdo = 0.1;

    void validate() const {
        if (f_seg < 0.0 || f_exist < 0.0 || f_cdo < 0.0) {
            throw ParamError("LossConfig: coefficients must be >= 0");
        }
    }
};

/// How feature channels pair with lane masks in the covariance loss.
enum class ChannelPairing {
    /// Every channel scores against every lane's mask (the verbatim rule).
    AllChannels,
    /// Channel n scores only against lane slot n.
    PerSlot,
};

struct LossBreakdown {
    double total = 0.0;
    double seg = 0.0;
    double exist = 0.0;
    double cdo = 0.0;
};

namespace detail {

inline void require_feature_masks(const ForwardResult& fwd, const std::vector<LaneMask>& masks,
                                  const ExistenceVector& exist, int slots) {
    if (static_cast<int>(masks.size()) != slots || static_cast<int>(exist.size()) != slots) {
        throw ShapeError("total_loss: need one mask and existence bit per lane slot");
    }
    for (const LaneMask& m : masks) {
        if (m.height() != fwd.feature.height() || m.width() != fwd.feature.width()) {
            throw ShapeError("total_loss: masks must be at feature resolution");
        }
    }
}

inline Tensor3 slot_channel(const Tensor3& f, int n) {
    Tensor3 t(1, f.height(), f.width());
    t.set_channel(0, f.channel(n));
    return t;
}

inline double cdo_component(const Tensor3& feature, const std::vector<LaneMask>& masks,
                            const ExistenceVector& exist, const CdoConfig& cc,
                            ChannelPairing pairing) {
    if (pairing == ChannelPairing::AllChannels) {
        return cdo_loss(feature, masks, exist, cc);
    }
    double acc = 0.0;
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const double s = cdo_score(slot_channel(feature, static_cast<int>(n)), masks[n], cc);
        const double diff = s - static_cast<double>(exist[n]);
        acc += diff * diff;
    }
    return acc / static_cast<double>(masks.size());
}

}  // namespace detail

/// Composite loss over one sample's forward outputs. The covariance
/// component is always evaluated (for logging); it enters `total` only when
/// cdo_enabled.
inline LossBreakdown total_loss(const ForwardResult& fwd, const std::vector<LaneMask>& masks,
                                const ExistenceVector& exist, const LossConfig& lc,
                                const CdoConfig& cc, ChannelPairing pairing, bool cdo_enabled,
                                OpTrace* trace = nullptr) {
    lc.validate();
    detail::require_feature_masks(fwd, masks, exist, fwd.feature.channels());
    LossBreakdown out;

    const int slots = fwd.feature.channels();
    const int hw = fwd.feature.height() * fwd.feature.width();
    double seg_acc = 0.0;
    for (int n = 0; n < slots; ++n) {
        for (int i = 0; i < fwd.feature.height(); ++i) {
            for (int j = 0; j < fwd.feature.width(); ++j) {
                seg_acc += detail::bce_from_logit(fwd.feature(n, i, j),
                                                  masks[static_cast<std::size_t>(n)].grid(i, j));
            }
        }
    }
    out.seg = seg_acc / static_cast<double>(slots * hw);
    if (trace) trace->record("bce_seg");

    double exist_acc = 0.0;
    for (int n = 0; n < slots; ++n) {
        exist_acc += detail::bce_from_logit(fwd.exist_logits[static_cast<std::size_t>(n)],
                                            static_cast<double>(exist[static_cast<std::size_t>(n)]));
    }
    out.exist = exist_acc / static_cast<double>(slots);
    if (trace) trace->record("bce_exist");

    out.cdo = detail::cdo_component(fwd.feature, masks, exist, cc, pairing);
    if (cdo_enabled && lc.f_cdo != 0.0 && trace) trace->record("cdo_loss");

    out.total = lc.f_seg * out.seg + lc.f_exist * out.exist +
                (cdo_enabled ? lc.f_cdo * out.cdo : 0.0);
    return out;
}

/// Full-chain gradient of one sample's total loss with respect to every
/// model parameter, accumulated into `grads` (a zero-initialized ToyModel).
/// Returns the loss breakdown evaluated at the current parameters.
inline LossBreakdown accumulate_sample_grad(const ToyModel& model, const TrainingPair& pair,
                                            const LossConfig& lc, const CdoConfig& cc,
                                            ChannelPairing pairing, bool cdo_enabled,
                                            ToyModel& grads) {
    const ForwardResult fwd = forward(model, pair.image);
    const LossBreakdown breakdown =
        total_loss(fwd, pair.masks, pair.exist, lc, cc, pairing, cdo_enabled);

    const int slots = model.slots;
    const int fh = fwd.feature.height(), fw = fwd.feature.width();
    const int hw = fh * fw;

    // dL/dF from the segmentation head.
    Tensor3 d_feature(slots, fh, fw);
    const double seg_coef = lc.f_seg / static_cast<double>(slots * hw);
    for (int n = 0; n < slots; ++n) {
        for (int i = 0; i < fh; ++i) {
            for (int j = 0; j < fw; ++j) {
                d_feature(n, i, j) =
                    seg_coef * (fwd.seg_probs(n, i, j) - pair.masks[static_cast<std::size_t>(n)].grid(i, j));
            }
        }
    }

    // Existence head: logit_n = gain_n * mean(F_n) + bias_n.
    for (int n = 0; n < slots; ++n) {
        const double d_logit =
            lc.f_exist *
            (fwd.exist_probs[static_cast<std::size_t>(n)] - static_cast<double>(pair.exist[static_cast<std::size_t>(n)])) /
            static_cast<double>(slots);
        double mean = 0.0;
        for (int i = 0; i < fh; ++i) {
            for (int j = 0; j < fw; ++j) mean += fwd.feature(n, i, j);
        }
        mean /= static_cast<double>(hw);
        grads.exist_gain[static_cast<std::size_t>(n)] += d_logit * mean;
        grads.exist_bias[static_cast<std::size_t>(n)] += d_logit;
        const double spread = d_logit * model.exist_gain[static_cast<std::size_t>(n)] /
                              static_cast<double>(hw);
        for (int i = 0; i < fh; ++i) {
            for (int j = 0; j < fw; ++j) d_feature(n, i, j) += spread;
        }
    }

    // Covariance branch.
    if (cdo_enabled && lc.f_cdo != 0.0) {
        if (pairing == ChannelPairing::AllChannels) {
            const GradTensor g = cdo_loss_backward(fwd.feature, pair.masks, pair.exist, cc);
            for (std::size_t i = 0; i < g.size(); ++i) {
                d_feature.data()[i] += lc.f_cdo * g.data()[i];
            }
        } else {
            for (int n = 0; n < slots; ++n) {
                const Tensor3 fn = detail::slot_channel(fwd.feature, n);
                const GradTensor gn = cdo_loss_backward(
                    fn, {pair.masks[static_cast<std::size_t>(n)]}, {pair.exist[static_cast<std::size_t>(n)]}, cc);
                const double scale = lc.f_cdo / static_cast<double>(slots);
                for (int i = 0; i < fh; ++i) {
                    for (int j = 0; j < fw; ++j) {
                        d_feature(n, i, j) += scale * gn(0, i, j);
                    }
                }
            }
        }
    }

    // conv2 backward, ReLU, conv1 backward.
    Tensor3 d_hidden(model.hidden, fwd.hidden.height(), fwd.hidden.width());
    detail::conv3x3_s2_backward(fwd.hidden, model.conv2_w, d_feature, d_hidden, grads.conv2_w,
                                grads.conv2_b);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        if (fwd.hidden_pre.data()[i] <= 0.0) d_hidden.data()[i] = 0.0;
    }
    Tensor3 input(1, pair.image.rows(), pair.image.cols());
    input.set_channel(0, pair.image);
    Tensor3 d_input(1, pair.image.rows(), pair.image.cols());
    detail::conv3x3_s2_backward(input, model.conv1_w, d_hidden, d_input, grads.conv1_w,
                                grads.conv1_b);
    return breakdown;
}

inline void sgd_step(ToyModel& model, const ToyModel& grads, double lr) {
    auto mp = model.parameter_blocks();
    auto gp = grads.parameter_blocks();
    for (std::size_t b = 0; b < mp.size(); ++b) {
        for (std::size_t i = 0; i < mp[b].size(); ++i) mp[b][i] -= lr * gp[b][i];
    }
}

/// Central finite differences over every model parameter; the oracle for
/// accumulate_sample_grad.
inline ToyModel finite_diff_param_grads(const ToyModel& model, const TrainingPair& pair,
                                        const LossConfig& lc, const CdoConfig& cc,
                                        ChannelPairing pairing, bool cdo_enabled,
                                        double h = 1e-5) {
    ToyModel probe = model;
    ToyModel grads = ToyModel::zeros(model.hidden, model.slots);
    auto pb = probe.parameter_blocks();
    auto gb = grads.parameter_blocks();
    auto eval = [&]() {
        const ForwardResult fwd = forward(probe, pair.image);
        return total_loss(fwd, pair.masks, pair.exist, lc, cc, pairing, cdo_enabled).total;
    };
    for (std::size_t b = 0; b < pb.size(); ++b) {
        for (std::size_t i = 0; i < pb[b].size(); ++i) {
            const double orig = pb[b][i];
            pb[b][i] = orig + h;
            const double up = eval();
            pb[b][i] = orig - h;
            const double down = eval();
            pb[b][i] = orig;
            gb[b][i] = (up - down) / (2.0 * h);
        }
    }
    return grads;
}

struct TrainConfig {
    int epochs = 40;
    double lr = 0.5;
    int batch_size = 8;
    std::uint64_t seed = 1;
    int hidden_channels = 8;
    LossConfig loss{};
    CdoConfig cdo{};
    double cdo_enable_fraction = 0.75;
    ChannelPairing pairing = ChannelPairing::AllChannels;

    void validate() const {
        if (epochs < 0) throw ParamError("TrainConfig: epochs must be >= 0");
        if (!(lr >= 0.0)) throw ParamError("TrainConfig: lr must be >= 0");
        if (batch_size < 1) throw ParamError("TrainConfig: batch_size must be >= 1");
        if (hidden_channels < 1) throw ParamError("TrainConfig: hidden_channels must be >= 1");
        if (cdo_enable_fraction < 0.0 || cdo_enable_fraction > 1.0) {
            throw ParamError("TrainConfig: cdo_enable_fraction must lie in [0,1]");
        }
        loss.validate();
        cdo.validate();
    }

    /// First epoch index at which the covariance term joins the objective.
    int enable_epoch() const {
        return static_cast<int>(std::llround(cdo_enable_fraction * epochs));
    }
};

struct EpochRecord {
    int epoch = 0;  // 0-based
    double l_seg = 0.0;
    double l_exist = 0.0;
    double l_cdo = 0.0;
    double total = 0.0;
    double mean_rif_h = 0.0;
    double mean_rif_v = 0.0;
};

struct TrainState {
    ToyModel model;
    TrainConfig config;
    int completed_epochs = 0;
    std::uint64_t master_seed = 0;
    std::vector<EpochRecord> log;
};

namespace detail {

// Sub-stream domains so dataset seeds never alias training seeds.
constexpr std::uint64_t kInitDomain = 0x494E495400000000ULL;
constexpr std::uint64_t kShuffleDomain = 0x5348554600000000ULL;

/// Mean RIF over existing lanes (and their paired channels) of one sample.
inline void accumulate_rif(const Tensor3& feature, const std::vector<LaneMask>& masks,
                           const ExistenceVector& exist, ChannelPairing pairing, double eps,
                           double& sum_h, double& sum_v, long long& count) {
    for (std::size_t n = 0; n < masks.size(); ++n) {
        if (exist[n] == 0) continue;
        const Matrix mt = transpose(masks[n].grid);
        const int c0 = pairing == ChannelPairing::AllChannels ? 0 : static_cast<int>(n);
        const int c1 = pairing == ChannelPairing::AllChannels ? feature.channels() : static_cast<int>(n) + 1;
        for (int c = c0; c < c1; ++c) {
            const Matrix s = feature.channel(c);
            const Matrix ch = matmul(s, mt);
            const Matrix cv = matmul(transpose(s), masks[n].grid);
            sum_h += rif_from_stats(mean_diag(ch), mean_all(ch), eps);
            sum_v += rif_from_stats(mean_diag(cv), mean_all(cv), eps);
            ++count;
        }
    }
}

}  // namespace detail

/// Post-epoch evaluation over a set of samples: mean loss components at the
/// current parameters plus mean RIF in both directions.
inline EpochRecord evaluate_epoch(const ToyModel& model, const std::vector<TrainingPair>& pairs,
                                  const TrainConfig& cfg, int epoch, bool cdo_enabled) {
    EpochRecord rec;
    rec.epoch = epoch;
    double sum_h = 0.0, sum_v = 0.0;
    long long rif_count = 0;
    for (const TrainingPair& pair : pairs) {
        const ForwardResult fwd = forward(model, pair.image);
        const LossBreakdown b =
            total_loss(fwd, pair.masks, pair.exist, cfg.loss, cfg.cdo, cfg.pairing, cdo_enabled);
        rec.l_seg += b.seg;
        rec.l_exist += b.exist;
        rec.l_cdo += b.cdo;
        rec.total += b.total;
        detail::accumulate_rif(fwd.feature, pair.masks, pair.exist, cfg.pairing, cfg.cdo.epsilon,
                               sum_h, sum_v, rif_count);
    }
    const double inv = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
    rec.l_seg *= inv;
    rec.l_exist *= inv;
    rec.l_cdo *= inv;
    rec.total *= inv;
    if (rif_count > 0) {
        rec.mean_rif_h = sum_h / static_cast<double>(rif_count);
        rec.mean_rif_v = sum_v / static_cast<double>(rif_count);
    }
    return rec;
}

inline TrainState make_initial_state(const TrainConfig& cfg, int slots = 4) {
    cfg.validate();
    TrainState state;
    state.config = cfg;
    state.master_seed = cfg.seed;
    SeededRng init_rng = SeededRng::derive(cfg.seed, detail::kInitDomain);
    state.model = ToyModel::random_init(cfg.hidden_channels, slots, init_rng);
    return state;
}

/// Runs epochs [state.completed_epochs, until_epoch). Batch gradients are
/// sample-averaged and applied with plain SGD; sample order reshuffles each
/// epoch from a per-epoch sub-stream, so resuming from a checkpoint replays
/// the identical trajectory. on_epoch fires after each epoch's log record.
inline void train_epochs(TrainState& state, const std::vector<TrainingPair>& pairs,
                         int until_epoch,
                         const std::function<void(const TrainState&)>& on_epoch = {}) {
    const TrainConfig& cfg = state.config;
    cfg.validate();
    if (pairs.empty()) throw ParamError("train_epochs: dataset is empty");
    for (const TrainingPair& p : pairs) {
        if (static_cast<int>(p.masks.size()) != state.model.slots) {
            throw ShapeError("train_epochs: sample slot count does not match the model");
        }
    }
    const int enable_at = cfg.enable_epoch();

    for (int epoch = state.completed_epochs; epoch < until_epoch; ++epoch) {
        const bool cdo_enabled = epoch >= enable_at && cfg.loss.f_cdo != 0.0;

        std::vector<std::size_t> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        SeededRng shuffle_rng =
            SeededRng::derive(state.master_seed, detail::kShuffleDomain + static_cast<std::uint64_t>(epoch));
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = static_cast<std::size_t>(
                shuffle_rng.uniform_int(static_cast<int>(i), static_cast<int>(order.size()) - 1));
            std::swap(order[i], order[j]);
        }

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            ToyModel grads = ToyModel::zeros(state.model.hidden, state.model.slots);
            for (std::size_t k = start; k < end; ++k) {
                const LossBreakdown b = accumulate_sample_grad(
                    state.model, pairs[order[k]], cfg.loss, cfg.cdo, cfg.pairing, cdo_enabled, grads);
                if (!std::isfinite(b.total)) {
                    throw Error("training aborted: non-finite loss at epoch " + std::to_string(epoch));
                }
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            auto gb = grads.parameter_blocks();
            for (auto& block : gb) {
                for (double& g : block) g *= scale;
            }
            sgd_step(state.model, grads, cfg.lr);
        }

        state.log.push_back(evaluate_epoch(state.model, pairs, cfg, epoch, cdo_enabled));
        state.completed_epochs = epoch + 1;
        if (on_epoch) on_epoch(state);
    }
}

/// Trains on a dataset's scenes (converted to feature-resolution pairs).
/// Pass a resume state to continue from its epoch counter.
inline TrainState train(const TrainConfig& cfg, const Dataset& dataset,
                        std::optional<TrainState> resume = {},
                        const std::function<void(const TrainState&)>& on_epoch = {}) {
    cfg.validate();
    if (dataset.scenes.empty()) throw ParamError("train: dataset is empty");
    const int feat_h = dataset.scenes.front().image.rows() / 4;
    const int feat_w = dataset.scenes.front().image.cols() / 4;
    std::vector<TrainingPair> pairs;
    pairs.reserve(dataset.scenes.size());
    for (const SyntheticScene& scene : dataset.scenes) {
        pairs.push_back(scene_to_training_pair(scene, feat_h, feat_w));
    }
    TrainState state;
    if (resume) {
        state = std::move(*resume);
        if (state.model.slots != static_cast<int>(pairs.front().masks.size())) {
            throw ShapeError("train: checkpoint slot count does not match the dataset");
        }
        state.config = cfg;
    } else {
        state = make_initial_state(cfg, dataset.params.lane_slots);
    }
    train_epochs(state, pairs, cfg.epochs, on_epoch);
    return state;
}

/// Extracts predicted polylines from segmentation probabilities: per slot,
/// each feature row contributes its argmax column when the probability
/// clears the threshold (ties break toward the lower column); slots with
/// at least two firing rows yield a polyline, scaled back to image
/// coordinates by the stride.
inline std::vector<Polyline> decode_lanes(const Tensor3& seg_probs, double threshold, int stride,
                                          OpTrace* trace = nullptr) {
    if (!(threshold > 0.0) || !(threshold < 1.0)) {
        throw ParamError("decode_lanes: threshold must lie in (0, 1)");
    }
    if (stride < 1) throw ParamError("decode_lanes: stride must be >= 1");
    std::vector<Polyline> lanes;
    for (int n = 0; n < seg_probs.channels(); ++n) {
        Polyline line;
        line.thickness = 1;
        for (int i = 0; i < seg_probs.height(); ++i) {
            int best = 0;
            for (int j = 1; j < seg_probs.width(); ++j) {
                if (seg_probs(n, i, j) > seg_probs(n, i, best)) best = j;
            }
            if (seg_probs(n, i, best) >= threshold) {
                line.points.push_back({static_cast<double>(i) * stride,
                                       static_cast<double>(best) * stride});
            }
        }
        if (line.points.size() >= 2) lanes.push_back(std::move(line));
    }
    if (trace) trace->record("decode_lanes");
    return lanes;
}

// -- checkpoint serialization -------------------------------------------

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = nlohmann::json{{"f_seg", c.f_seg}, {"f_exist", c.f_exist}, {"f_cdo", c.f_cdo}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
    j.at("f_seg").get_to(c.f_seg);
    j.at("f_exist").get_to(c.f_exist);
    j.at("f_cdo").get_to(c.f_cdo);
}

inline void to_json(nlohmann::json& j, const CdoConfig& c) {
    j = nlohmann::json{{"alpha", c.alpha},
                       {"beta", c.beta},
                       {"epsilon", c.epsilon},
                       {"score_norm", c.norm == ScoreNorm::HalfChannelMean ? "half" : "unit"}};
}
inline void from_json(const nlohmann::json& j, CdoConfig& c) {
    j.at("alpha").get_to(c.alpha);
    j.at("beta").get_to(c.beta);
    j.at("epsilon").get_to(c.epsilon);
    const std::string norm = j.at("score_norm").get<std::string>();
    if (norm == "half") {
        c.norm = ScoreNorm::HalfChannelMean;
    } else if (norm == "unit") {
        c.norm = ScoreNorm::ChannelMean;
    } else {
        throw FormatError("CdoConfig: unknown score_norm '" + norm + "'");
    }
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"lr", c.lr},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"hidden_channels", c.hidden_channels},
                       {"loss", c.loss},
                       {"cdo", c.cdo},
                       {"cdo_enable_fraction", c.cdo_enable_fraction},
                       {"pairing", c.pairing == ChannelPairing::AllChannels ? "all" : "per-slot"}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("epochs").get_to(c.epochs);
    j.at("lr").get_to(c.lr);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
    j.at("hidden_channels").get_to(c.hidden_channels);
    j.at("loss").get_to(c.loss);
    j.at("cdo").get_to(c.cdo);
    j.at("cdo_enable_fraction").get_to(c.cdo_enable_fraction);
    const std::string pairing = j.at("pairing").get<std::string>();
    if (pairing == "all") {
        c.pairing = ChannelPairing::AllChannels;
    } else if (pairing == "per-slot") {
        c.pairing = ChannelPairing::PerSlot;
    } else {
        throw FormatError("TrainConfig: unknown pairing '" + pairing + "'");
    }
}

inline void save_checkpoint(const TrainState& state, const std::string& path) {
    nlohmann::json j{{"format_version", 1},
                     {"completed_epochs", state.completed_epochs},
                     {"master_seed", state.master_seed},
                     {"config", state.config},
                     {"model",
                      {{"hidden", state.model.hidden},
                       {"slots", state.model.slots},
                       {"conv1_w", state.model.conv1_w},
                       {"conv1_b", state.model.conv1_b},
                       {"conv2_w", state.model.conv2_w},
                       {"conv2_b", state.model.conv2_b},
                       {"exist_gain", state.model.exist_gain},
                       {"exist_bias", state.model.exist_bias}}}};
    nlohmann::json log = nlohmann::json::array();
    for (const EpochRecord& r : state.log) {
        log.push_back(nlohmann::json::array(
            {r.epoch, r.l_seg, r.l_exist, r.l_cdo, r.total, r.mean_rif_h, r.mean_rif_v}));
    }
    j["log"] = std::move(log);
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_checkpoint: bad JSON in " + path + ": " + e.what());
    }
    TrainState state;
    try {
        if (j.at("format_version").get<int>() != 1) {
            throw FormatError("load_checkpoint: unsupported format_version in " + path);
        }
        j.at("completed_epochs").get_to(state.completed_epochs);
        j.at("master_seed").get_to(state.master_seed);
        j.at("config").get_to(state.config);
        const nlohmann::json& m = j.at("model");
        state.model.hidden = m.at("hidden").get<int>();
        state.model.slots = m.at("slots").get<int>();
        m.at("conv1_w").get_to(state.model.conv1_w);
        m.at("conv1_b").get_to(state.model.conv1_b);
        m.at("conv2_w").get_to(state.model.conv2_w);
        m.at("conv2_b").get_to(state.model.conv2_b);
        m.at("exist_gain").get_to(state.model.exist_gain);
        m.at("exist_bias").get_to(state.model.exist_bias);
        for (const auto& row : j.at("log")) {
            EpochRecord r;
            r.epoch = row.at(0).get<int>();
            r.l_seg = row.at(1).get<double>();
            r.l_exist = row.at(2).get<double>();
            r.l_cdo = row.at(3).get<double>();
            r.total = row.at(4).get<double>();
            r.mean_rif_h = row.at(5).get<double>();
            r.mean_rif_v = row.at(6).get<double>();
            state.log.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_checkpoint: field error in " + path + ": " + e.what());
    }
    const ToyModel ref = ToyModel::zeros(state.model.hidden, state.model.slots);
    if (state.model.conv1_w.size() != ref.conv1_w.size() ||
        state.model.conv1_b.size() != ref.conv1_b.size() ||
        state.model.conv2_w.size() != ref.conv2_w.size() ||
        state.model.conv2_b.size() != ref.conv2_b.size() ||
        state.model.exist_gain.size() != ref.exist_gain.size() ||
        state.model.exist_bias.size() != ref.exist_bias.size()) {
        throw FormatError("load_checkpoint: parameter array sizes disagree with hidden/slots in " + path);
    }
    if (static_cast<int>(state.log.size()) != state.completed_epochs) {
        throw FormatError("load_checkpoint: log length does not match completed_epochs in " + path);
    }
    return state;
}

/// Epoch log as CSV: epoch,L_seg,L_exist,L_cdo,total,mean_rif_h,mean_rif_v.
inline void write_epoch_log(const std::vector<EpochRecord>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_epoch_log: cannot open " + path);
    out << "epoch,L_seg,L_exist,L_cdo,total,mean_rif_h,mean_rif_v\n";
    char buf[256];
    for (const EpochRecord& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.l_seg, r.l_exist, r.l_cdo, r.total, r.mean_rif_h, r.mean_rif_v);
        out << buf;
    }
}

}  // namespace cdo
