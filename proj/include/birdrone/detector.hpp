#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>
#include <thread>
#include <tuple>

#include "birdrone/backbone.hpp"
#include "birdrone/boxes.hpp"
#include "birdrone/metrics.hpp"
#include "birdrone/serialize.hpp"

namespace brd {

// ---------------------------------------------------------------------------
// model: backbone + PAN-style neck + per-level heads
// ---------------------------------------------------------------------------

template <typename T>
struct Detector {
    ModelConfig cfg;
    Backbone<T> backbone;
    // each neck merge: 1x1 compress on the concatenation, then a block at the
    // output width (keeps the wide concats from dominating the flop budget)
    Conv2d<T> ncomp4;       // concat(P4, up(P5)) -> p4_ch
    GelanBlock<T> nblock4;
    Conv2d<T> ncomp3;       // concat(P3, up(N4)) -> p3_ch
    GelanBlock<T> nblock3;
    Conv2d<T> ndown3;       // F3 -> stride 16
    Conv2d<T> dcomp4;       // concat(down(F3), N4) -> p4_ch
    GelanBlock<T> dblock4;
    Conv2d<T> ndown4;       // F4 -> stride 32
    Conv2d<T> dcomp5;       // concat(down(F4), P5) -> p5_ch
    GelanBlock<T> dblock5;
    int neck_rmpda_at = 0;  // 0 off, else the level (3,4,5) whose output it follows
    DualAttention<T> neck_rmpda;
    Conv2d<T> head3a, head4a, head5a;  // 3x3 + SiLU
    Conv2d<T> head3b, head4b, head5b;  // 1x1 linear to 5+num_classes
    std::vector<std::string> notes;

    static constexpr double kObjBiasInit = -4.59511985013459;  // sigmoid = 0.01

    static Detector make(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        Detector m;
        m.cfg = cfg;
        m.backbone = Backbone<T>::make(cfg, rng);
        m.notes = m.backbone.notes;
        const int d = cfg.csp_depth;
        const bool ae = cfg.use_aelan;
        m.ncomp4 = Conv2d<T>::make(cfg.p4_ch + cfg.p5_ch, cfg.p4_ch, 1, 1, 0, rng);
        m.nblock4 = GelanBlock<T>::make({cfg.p4_ch, cfg.p4_ch, d, ae}, rng);
        m.ncomp3 = Conv2d<T>::make(cfg.p3_ch + cfg.p4_ch, cfg.p3_ch, 1, 1, 0, rng);
        m.nblock3 = GelanBlock<T>::make({cfg.p3_ch, cfg.p3_ch, d, ae}, rng);
        m.ndown3 = Conv2d<T>::make(cfg.p3_ch, cfg.p3_ch, 3, 2, 1, rng);
        m.dcomp4 = Conv2d<T>::make(cfg.p3_ch + cfg.p4_ch, cfg.p4_ch, 1, 1, 0, rng);
        m.dblock4 = GelanBlock<T>::make({cfg.p4_ch, cfg.p4_ch, d, ae}, rng);
        m.ndown4 = Conv2d<T>::make(cfg.p4_ch, cfg.p4_ch, 3, 2, 1, rng);
        m.dcomp5 = Conv2d<T>::make(cfg.p4_ch + cfg.p5_ch, cfg.p5_ch, 1, 1, 0, rng);
        m.dblock5 = GelanBlock<T>::make({cfg.p5_ch, cfg.p5_ch, d, ae}, rng);
        if (cfg.use_rmpda) {
            // deepest neck merge whose output is at least 9px wide
            for (int level : {5, 4, 3}) {
                if (cfg.level_size(level) >= 9) {
                    m.neck_rmpda_at = level;
                    break;
                }
            }
            if (m.neck_rmpda_at > 0) {
                m.neck_rmpda =
                    make_rmpda<T>(cfg.level_channels(m.neck_rmpda_at), rng, cfg.sa_kernel);
            } else {
                m.notes.push_back("neck rmpda disabled: no merge output is >= 9px");
            }
        }
        const int out_ch = 5 + cfg.num_classes;
        m.head3a = Conv2d<T>::make(cfg.p3_ch, cfg.p3_ch, 3, 1, 1, rng);
        m.head3b = Conv2d<T>::make(cfg.p3_ch, out_ch, 1, 1, 0, rng);
        m.head4a = Conv2d<T>::make(cfg.p4_ch, cfg.p4_ch, 3, 1, 1, rng);
        m.head4b = Conv2d<T>::make(cfg.p4_ch, out_ch, 1, 1, 0, rng);
        m.head5a = Conv2d<T>::make(cfg.p5_ch, cfg.p5_ch, 3, 1, 1, rng);
        m.head5b = Conv2d<T>::make(cfg.p5_ch, out_ch, 1, 1, 0, rng);
        // start objectness near zero probability so early training is not
        // swamped by confident false positives
        for (Conv2d<T>* hb : {&m.head3b, &m.head4b, &m.head5b})
            hb->b.data()[4] = static_cast<T>(kObjBiasInit);
        return m;
    }

    // raw per-level predictions, channels [tx, ty, tw, th, obj, class logits]
    std::array<Tensor<T>, 3> forward(const Tensor<T>& images) const {
        auto pyr = backbone.forward(images);
        auto n4 = nblock4.forward(
            silu(ncomp4.forward(concat_channels<T>({pyr.p4, upsample_nearest2(pyr.p5)}))));
        auto n3 = nblock3.forward(
            silu(ncomp3.forward(concat_channels<T>({pyr.p3, upsample_nearest2(n4)}))));
        Tensor<T> f3 = n3;
        if (neck_rmpda_at == 3) f3 = neck_rmpda.forward(f3);
        auto f4 = dblock4.forward(
            silu(dcomp4.forward(concat_channels<T>({silu(ndown3.forward(f3)), n4}))));
        if (neck_rmpda_at == 4) f4 = neck_rmpda.forward(f4);
        auto f5 = dblock5.forward(
            silu(dcomp5.forward(concat_channels<T>({silu(ndown4.forward(f4)), pyr.p5}))));
        if (neck_rmpda_at == 5) f5 = neck_rmpda.forward(f5);
        return {head3b.forward(silu(head3a.forward(f3))),
                head4b.forward(silu(head4a.forward(f4))),
                head5b.forward(silu(head5a.forward(f5)))};
    }

    ParamList<T> params() const {
        ParamList<T> out;
        backbone.params(out, "backbone");
        ncomp4.params(out, "neck.n4.comp");
        nblock4.params(out, "neck.n4");
        ncomp3.params(out, "neck.n3.comp");
        nblock3.params(out, "neck.n3");
        ndown3.params(out, "neck.down3");
        dcomp4.params(out, "neck.d4.comp");
        dblock4.params(out, "neck.d4");
        ndown4.params(out, "neck.down4");
        dcomp5.params(out, "neck.d5.comp");
        dblock5.params(out, "neck.d5");
        if (neck_rmpda_at > 0)
            neck_rmpda.params(out, "neck.rmpda_f" + std::to_string(neck_rmpda_at));
        head3a.params(out, "head.p3.a");
        head3b.params(out, "head.p3.b");
        head4a.params(out, "head.p4.a");
        head4b.params(out, "head.p4.b");
        head5a.params(out, "head.p5.a");
        head5b.params(out, "head.p5.b");
        return out;
    }

    std::map<std::string, double> meta() const {
        return {{"image_size", static_cast<double>(cfg.image_size)},
                {"in_channels", static_cast<double>(cfg.in_channels)},
                {"num_classes", static_cast<double>(cfg.num_classes)},
                {"stem_ch", static_cast<double>(cfg.stem_ch)},
                {"p3_ch", static_cast<double>(cfg.p3_ch)},
                {"p4_ch", static_cast<double>(cfg.p4_ch)},
                {"p5_ch", static_cast<double>(cfg.p5_ch)},
                {"csp_depth", static_cast<double>(cfg.csp_depth)},
                {"use_aelan", cfg.use_aelan ? 1.0 : 0.0},
                {"use_mpda", cfg.use_mpda ? 1.0 : 0.0},
                {"use_rmpda", cfg.use_rmpda ? 1.0 : 0.0},
                {"sa_kernel", static_cast<double>(cfg.sa_kernel)}};
    }
};

inline ModelConfig model_config_from_meta(const std::map<std::string, double>& meta) {
    ModelConfig cfg;
    auto get = [&](const char* key, double fallback) {
        auto it = meta.find(key);
        return it != meta.end() ? it->second : fallback;
    };
    cfg.image_size = static_cast<int>(get("image_size", cfg.image_size));
    cfg.in_channels = static_cast<int>(get("in_channels", cfg.in_channels));
    cfg.num_classes = static_cast<int>(get("num_classes", cfg.num_classes));
    cfg.stem_ch = static_cast<int>(get("stem_ch", cfg.stem_ch));
    cfg.p3_ch = static_cast<int>(get("p3_ch", cfg.p3_ch));
    cfg.p4_ch = static_cast<int>(get("p4_ch", cfg.p4_ch));
    cfg.p5_ch = static_cast<int>(get("p5_ch", cfg.p5_ch));
    cfg.csp_depth = static_cast<int>(get("csp_depth", cfg.csp_depth));
    cfg.use_aelan = get("use_aelan", 0.0) != 0.0;
    cfg.use_mpda = get("use_mpda", 0.0) != 0.0;
    cfg.use_rmpda = get("use_rmpda", 0.0) != 0.0;
    cfg.sa_kernel = static_cast<int>(get("sa_kernel", cfg.sa_kernel));
    return cfg;
}

// ---------------------------------------------------------------------------
// target assignment
// ---------------------------------------------------------------------------

struct Assignment {
    int image = 0;
    int level = 3;
    int i = 0, j = 0;  // cell row, col
    BoundingBox box;
};

// Each GT goes to the level whose nominal object size 4*stride is nearest to
// its larger pixel side (ties to the shallower level), at the cell holding
// its center. When two GTs land on the same cell the larger area wins.
inline std::vector<Assignment> assign_targets(
    const std::vector<std::vector<BoundingBox>>& batch_gt, const ModelConfig& cfg) {
    std::vector<Assignment> out;
    std::map<std::tuple<int, int, int, int>, std::size_t> taken;
    for (std::size_t n = 0; n < batch_gt.size(); ++n) {
        for (const BoundingBox& b : batch_gt[n]) {
            const double side = std::max(b.w, b.h) * cfg.image_size;
            int level = 3;
            double best = std::abs(side - 4.0 * cfg.level_stride(3));
            for (int l = 4; l <= 5; ++l) {
                const double d = std::abs(side - 4.0 * cfg.level_stride(l));
                if (d < best) {
                    best = d;
                    level = l;
                }
            }
            const int cells = cfg.level_size(level);
            const int i = std::clamp(static_cast<int>(std::floor(b.cy * cells)), 0, cells - 1);
            const int j = std::clamp(static_cast<int>(std::floor(b.cx * cells)), 0, cells - 1);
            Assignment a{static_cast<int>(n), level, i, j, b};
            const auto key = std::make_tuple(a.image, level, i, j);
            auto it = taken.find(key);
            if (it == taken.end()) {
                taken.emplace(key, out.size());
                out.push_back(a);
            } else if (b.area() > out[it->second].box.area()) {
                out[it->second] = a;
            }
        }
    }
    return out;
}

// Raw head values that decode back to the assignment's box (for round-trip
// checks; training regresses through the decode transform directly).
inline std::array<double, 4> encode_box(const Assignment& a, const ModelConfig& cfg) {
    const int cells = cfg.level_size(a.level);
    const double s = cfg.level_stride(a.level);
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    return {logit(a.box.cx * cells - a.j), logit(a.box.cy * cells - a.i),
            std::log(a.box.w * cfg.image_size / (4.0 * s)),
            std::log(a.box.h * cfg.image_size / (4.0 * s))};
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

struct LossConfig {
    double w_box = 5.0;
    double w_obj = 1.0;
    double w_cls = 0.5;
    // BCE weight on positive objectness cells; balances the handful of
    // positives against hundreds of background cells at desk scale
    double obj_pos_weight = 64.0;
    double tw_clamp = 4.0;
};

struct LossBreakdown {
    double box = 0, obj = 0, cls = 0, total = 0;
};

template <typename T>
struct LossResult {
    Tensor<T> total;  // scalar graph node
    LossBreakdown parts;
};

namespace detail {

// 1 - CIoU between a predicted box (graph scalars) and a constant GT box
template <typename T>
Tensor<T> ciou_term(const Tensor<T>& cx, const Tensor<T>& cy, const Tensor<T>& w,
                    const Tensor<T>& h, const BoundingBox& g) {
    auto cs = [](double v) { return Tensor<T>::scalar(static_cast<T>(v)); };
    auto px1 = sub(cx, mul_scalar(w, T(0.5)));
    auto px2 = add(cx, mul_scalar(w, T(0.5)));
    auto py1 = sub(cy, mul_scalar(h, T(0.5)));
    auto py2 = add(cy, mul_scalar(h, T(0.5)));
    auto iw = clamp_min(sub(minimum(px2, cs(g.x2())), maximum(px1, cs(g.x1()))), T(0));
    auto ih = clamp_min(sub(minimum(py2, cs(g.y2())), maximum(py1, cs(g.y1()))), T(0));
    auto inter = mul(iw, ih);
    auto uni = add_scalar(sub(mul(w, h), inter), static_cast<T>(g.area()));
    auto iou_v = div(inter, uni);
    auto rho2 = add(square(add_scalar(cx, static_cast<T>(-g.cx))),
                    square(add_scalar(cy, static_cast<T>(-g.cy))));
    auto cw = sub(maximum(px2, cs(g.x2())), minimum(px1, cs(g.x1())));
    auto chh = sub(maximum(py2, cs(g.y2())), minimum(py1, cs(g.y1())));
    auto c2 = add_scalar(add(square(cw), square(chh)), T(1e-9));
    auto v = mul_scalar(square(add_scalar(atan(div(w, h)), static_cast<T>(-std::atan(g.w / g.h)))),
                        static_cast<T>(4.0 / (kPi * kPi)));
    auto alpha = div(v, add_scalar(add(sub(cs(1.0), iou_v), v), T(1e-9)));
    auto ciou = sub(sub(iou_v, div(rho2, c2)), mul(alpha, v));
    return sub(cs(1.0), ciou);
}

}  // namespace detail

// Composite detection loss. Box: mean (1 - CIoU) over positive cells through
// the decode transform. Objectness: BCE with logits averaged over every cell
// of every level. Class: BCE summed over class logits at positives, averaged
// over positives. Weighted total per LossConfig.
template <typename T>
LossResult<T> compute_loss(const std::array<Tensor<T>, 3>& raw,
                           const std::vector<Assignment>& assigns, const ModelConfig& cfg,
                           const LossConfig& lc = {}) {
    auto cs = [](double v) { return Tensor<T>::scalar(static_cast<T>(v)); };
    const int batch = raw[0].shape().n;

    Tensor<T> box_sum = cs(0.0), cls_sum = cs(0.0);
    for (const Assignment& a : assigns) {
        const Tensor<T>& r = raw[a.level - 3];
        const double s = cfg.level_stride(a.level);
        const double cell_to_norm = s / cfg.image_size;
        auto tx = select(r, a.image, 0, a.i, a.j);
        auto ty = select(r, a.image, 1, a.i, a.j);
        auto tw = select(r, a.image, 2, a.i, a.j);
        auto th = select(r, a.image, 3, a.i, a.j);
        auto cx = mul_scalar(add_scalar(sigmoid(tx), static_cast<T>(a.j)),
                             static_cast<T>(cell_to_norm));
        auto cy = mul_scalar(add_scalar(sigmoid(ty), static_cast<T>(a.i)),
                             static_cast<T>(cell_to_norm));
        auto w = mul_scalar(exp(clamp_max(tw, static_cast<T>(lc.tw_clamp))),
                            static_cast<T>(4.0 * cell_to_norm));
        auto h = mul_scalar(exp(clamp_max(th, static_cast<T>(lc.tw_clamp))),
                            static_cast<T>(4.0 * cell_to_norm));
        box_sum = add(box_sum, detail::ciou_term(cx, cy, w, h, a.box));
        for (int c = 0; c < cfg.num_classes; ++c) {
            auto logit = select(r, a.image, 5 + c, a.i, a.j);
            cls_sum = add(cls_sum, bce_with_logits_sum(
                                       logit, cs(a.box.class_id == c ? 1.0 : 0.0)));
        }
    }

    Tensor<T> obj_sum = cs(0.0);
    std::size_t total_cells = 0;
    for (int li = 0; li < 3; ++li) {
        const Shape s = raw[li].shape();
        total_cells += static_cast<std::size_t>(s.n) * s.h * s.w;
        auto logits = slice_channels(raw[li], 4, 1);
        Tensor<T> target(Shape{s.n, 1, s.h, s.w});
        Tensor<T> weight(Shape{s.n, 1, s.h, s.w}, T(1));
        for (const Assignment& a : assigns) {
            if (a.level - 3 != li) continue;
            target.at(a.image, 0, a.i, a.j) = T(1);
            weight.at(a.image, 0, a.i, a.j) = static_cast<T>(lc.obj_pos_weight);
        }
        obj_sum = add(obj_sum, bce_with_logits_sum(logits, target, weight));
    }

    const std::size_t npos = assigns.size();
    Tensor<T> box_loss = npos > 0 ? mul_scalar(box_sum, static_cast<T>(1.0 / npos)) : cs(0.0);
    Tensor<T> cls_loss = npos > 0 ? mul_scalar(cls_sum, static_cast<T>(1.0 / npos)) : cs(0.0);
    Tensor<T> obj_loss = mul_scalar(obj_sum, static_cast<T>(1.0 / total_cells));

    LossResult<T> res;
    res.parts.box = static_cast<double>(box_loss.value());
    res.parts.obj = static_cast<double>(obj_loss.value());
    res.parts.cls = static_cast<double>(cls_loss.value());
    res.total = add(add(mul_scalar(box_loss, static_cast<T>(lc.w_box)),
                        mul_scalar(obj_loss, static_cast<T>(lc.w_obj))),
                    mul_scalar(cls_loss, static_cast<T>(lc.w_cls)));
    res.parts.total = static_cast<double>(res.total.value());
    (void)batch;
    return res;
}

// ---------------------------------------------------------------------------
// decode + NMS
// ---------------------------------------------------------------------------

template <typename T>
std::vector<Detection> decode(const std::array<Tensor<T>, 3>& raw, const ModelConfig& cfg,
                              double conf_threshold, int image_index,
                              double tw_clamp = 4.0) {
    std::vector<Detection> dets;
    for (int li = 0; li < 3; ++li) {
        const Tensor<T>& r = raw[li];
        const Shape s = r.shape();
        const double stride = cfg.level_stride(3 + li);
        const double cell_to_norm = stride / cfg.image_size;
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const double obj =
                    1.0 / (1.0 + std::exp(-static_cast<double>(r.at(image_index, 4, i, j))));
                int cls = 0;
                double best_logit = static_cast<double>(r.at(image_index, 5, i, j));
                for (int c = 1; c < cfg.num_classes; ++c) {
                    const double v = static_cast<double>(r.at(image_index, 5 + c, i, j));
                    if (v > best_logit) {
                        best_logit = v;
                        cls = c;
                    }
                }
                const double conf = obj / (1.0 + std::exp(-best_logit));
                if (conf < conf_threshold) continue;
                const double sx =
                    1.0 / (1.0 + std::exp(-static_cast<double>(r.at(image_index, 0, i, j))));
                const double sy =
                    1.0 / (1.0 + std::exp(-static_cast<double>(r.at(image_index, 1, i, j))));
                const double tw =
                    std::min(static_cast<double>(r.at(image_index, 2, i, j)), tw_clamp);
                const double th =
                    std::min(static_cast<double>(r.at(image_index, 3, i, j)), tw_clamp);
                Detection d;
                d.box.class_id = cls;
                d.box.cx = (j + sx) * cell_to_norm;
                d.box.cy = (i + sy) * cell_to_norm;
                d.box.w = std::exp(tw) * 4.0 * cell_to_norm;
                d.box.h = std::exp(th) * 4.0 * cell_to_norm;
                d.confidence = conf;
                dets.push_back(d);
            }
    }
    return dets;
}

inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[a].confidence > dets[b].confidence;
    });
    std::vector<bool> dead(dets.size(), false);
    std::vector<Detection> out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const int a = order[k];
        if (dead[a]) continue;
        out.push_back(dets[a]);
        for (std::size_t m = k + 1; m < order.size(); ++m) {
            const int b = order[m];
            if (dead[b] || dets[b].box.class_id != dets[a].box.class_id) continue;
            if (iou(dets[a].box, dets[b].box) >= iou_threshold) dead[b] = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 16;
    int epochs = 300;
    double lr = 0.01;
    double momentum = 0.9;
    double lr_final_frac = 0.01;  // cosine decays to lr * this
    double clip_norm = 10.0;
    std::uint64_t seed = 42;
    LossConfig loss;
    int eval_every = 1;        // validate every N epochs (0 = never)
    double eval_conf = 0.25;   // accuracy-triple threshold during validation
    double decode_conf = 0.001;
    double nms_iou = 0.45;

    void validate() const {
        require(batch_size >= 1 && epochs >= 1, "batch_size and epochs must be positive");
        require(lr >= 0.0 && momentum >= 0.0 && momentum < 1.0, "bad lr/momentum");
    }
};

inline double cosine_lr(double lr0, double final_frac, int epoch, int total_epochs) {
    if (total_epochs <= 1) return lr0;
    const double lrf = lr0 * final_frac;
    return lrf + 0.5 * (lr0 - lrf) *
                     (1.0 + std::cos(kPi * epoch / static_cast<double>(total_epochs - 1)));
}

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    LossBreakdown loss;
    bool has_val = false;
    MetricsReport val;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
};

template <typename T>
Tensor<T> stack_images(const std::vector<Sample<T>>& samples, const std::vector<int>& idx,
                       std::size_t begin, std::size_t end) {
    const Shape s0 = samples[idx[begin]].image.shape();
    Tensor<T> batch(Shape{static_cast<int>(end - begin), s0.c, s0.h, s0.w});
    const std::size_t per = s0.numel();
    for (std::size_t k = begin; k < end; ++k) {
        const Tensor<T>& img = samples[idx[k]].image;
        require(img.shape() == s0, "mixed image shapes in one batch");
        std::copy(img.data(), img.data() + per, batch.data() + (k - begin) * per);
    }
    return batch;
}

// Single-image (or small-batch) inference path shared by eval and training
// validation. Returns post-NMS detections per sample.
template <typename T>
std::vector<std::vector<Detection>> run_inference(
    const Detector<T>& model, const std::vector<Sample<T>>& samples, double decode_conf,
    double nms_iou, int batch_size = 8, int threads = 1) {
    std::vector<std::vector<Detection>> dets(samples.size());
    auto worker = [&](std::size_t begin, std::size_t end) {
        NoGradGuard ng;
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t b = begin; b < end; b += batch_size) {
            const std::size_t e = std::min(end, b + batch_size);
            auto raw = model.forward(stack_images(samples, idx, b, e));
            for (std::size_t k = b; k < e; ++k)
                dets[k] = nms(decode(raw, model.cfg, decode_conf, static_cast<int>(k - b)),
                              nms_iou);
        }
    };
    if (threads <= 1 || samples.size() < 2) {
        worker(0, samples.size());
    } else {
        const std::size_t nt = std::min<std::size_t>(threads, samples.size());
        std::vector<std::thread> pool;
        const std::size_t chunk = (samples.size() + nt - 1) / nt;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t b = t * chunk;
            const std::size_t e = std::min(samples.size(), b + chunk);
            if (b < e) pool.emplace_back(worker, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return dets;
}

template <typename T>
MetricsReport evaluate_model(const Detector<T>& model, const std::vector<Sample<T>>& samples,
                             double conf_threshold = 0.25, double decode_conf = 0.001,
                             double nms_iou = 0.45, bool timing = false, int threads = 1) {
    auto dets = run_inference(model, samples, decode_conf, nms_iou, 8, threads);
    std::vector<std::vector<BoundingBox>> gts(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) gts[k] = samples[k].labels;
    MetricsReport rep = evaluate_detections(dets, gts, model.cfg.num_classes,
                                            model.cfg.image_size, conf_threshold);
    if (timing && samples.size() >= 4) {
        NoGradGuard ng;
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        double acc = 0.0;
        std::size_t counted = 0;
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const auto t0 = std::chrono::steady_clock::now();
            auto raw = model.forward(stack_images(samples, idx, k, k + 1));
            auto d = nms(decode(raw, model.cfg, decode_conf, 0), nms_iou);
            const auto t1 = std::chrono::steady_clock::now();
            (void)d;
            if (k >= 3) {  // warm-up runs excluded
                acc += std::chrono::duration<double>(t1 - t0).count();
                ++counted;
            }
        }
        rep.ait_frame_s = counted > 0 ? acc / counted : 0.0;
    }
    return rep;
}

// SGD with momentum, cosine learning-rate schedule, global-norm gradient
// clipping, seeded shuffling. Aborts on non-finite loss naming the epoch.
// Deterministic for a fixed seed when single-threaded.
template <typename T>
TrainResult train(Detector<T>& model, const std::vector<Sample<T>>& train_set,
                  const std::vector<Sample<T>>& val_set, const TrainConfig& tc,
                  std::ostream* jsonl = nullptr) {
    tc.validate();
    require(!train_set.empty(), "train(): empty dataset");
    ParamList<T> params = model.params();
    std::vector<std::vector<T>> velocity;
    velocity.reserve(params.size());
    for (auto& [name, t] : params) velocity.emplace_back(t.numel(), T(0));

    Rng rng(tc.seed);
    std::vector<int> idx(train_set.size());
    std::iota(idx.begin(), idx.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = cosine_lr(tc.lr, tc.lr_final_frac, epoch, tc.epochs);
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);

        LossBreakdown epoch_loss;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < idx.size(); b += tc.batch_size) {
            const std::size_t e = std::min(idx.size(), b + tc.batch_size);
            auto images = stack_images(train_set, idx, b, e);
            std::vector<std::vector<BoundingBox>> gt;
            for (std::size_t k = b; k < e; ++k) gt.push_back(train_set[idx[k]].labels);

            auto raw = model.forward(images);
            auto loss = compute_loss(raw, assign_targets(gt, model.cfg), model.cfg, tc.loss);
            if (!std::isfinite(loss.parts.total))
                fail("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                     " step " + std::to_string(steps));
            zero_all_grads(params);
            backward(loss.total);

            if (tc.clip_norm > 0.0) {
                double norm2 = 0.0;
                for (auto& [name, t] : params)
                    if (t.has_grad())
                        for (const T& g : t.grad()) norm2 += static_cast<double>(g) * g;
                const double norm = std::sqrt(norm2);
                if (norm > tc.clip_norm) {
                    const T scale = static_cast<T>(tc.clip_norm / norm);
                    for (auto& [name, t] : params)
                        if (t.has_grad()) {
                            T* g = t.grad_data();
                            for (std::size_t k = 0; k < t.numel(); ++k) g[k] *= scale;
                        }
                }
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor<T>& t = params[p].second;
                if (!t.has_grad()) continue;
                const T* g = t.grad_data();
                T* w = t.data();
                T* v = velocity[p].data();
                const T mom = static_cast<T>(tc.momentum);
                const T step = static_cast<T>(lr);
                for (std::size_t k = 0; k < t.numel(); ++k) {
                    v[k] = mom * v[k] + g[k];
                    w[k] -= step * v[k];
                }
            }
            epoch_loss.box += loss.parts.box;
            epoch_loss.obj += loss.parts.obj;
            epoch_loss.cls += loss.parts.cls;
            epoch_loss.total += loss.parts.total;
            ++steps;
        }
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.loss = {epoch_loss.box / steps, epoch_loss.obj / steps, epoch_loss.cls / steps,
                    epoch_loss.total / steps};
        const bool last = epoch == tc.epochs - 1;
        if (!val_set.empty() && tc.eval_every > 0 &&
            ((epoch + 1) % tc.eval_every == 0 || last)) {
            log.has_val = true;
            log.val = evaluate_model(model, val_set, tc.eval_conf, tc.decode_conf, tc.nms_iou);
        }
        if (jsonl) {
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "{\"epoch\":%d,\"lr\":%.10g,\"box\":%.10g,\"obj\":%.10g,"
                          "\"cls\":%.10g,\"total\":%.10g",
                          log.epoch, log.lr, log.loss.box, log.loss.obj, log.loss.cls,
                          log.loss.total);
            *jsonl << buf;
            if (log.has_val) {
                std::snprintf(buf, sizeof(buf),
                              ",\"val_map50\":%.10g,\"val_map50_95\":%.10g,"
                              "\"val_precision\":%.10g,\"val_recall\":%.10g",
                              log.val.map50, log.val.map50_95, log.val.precision,
                              log.val.recall);
                *jsonl << buf;
            }
            *jsonl << "}\n";
        }
        result.epochs.push_back(std::move(log));
    }
    return result;
}

}  // namespace brd
