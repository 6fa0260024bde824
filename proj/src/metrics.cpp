// SPDX-License-Identifier: Apache-2.0
#include "scd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scd/errors.hpp"
#include "scd/parallel.hpp"
#include "scd/rng.hpp"

namespace scd {

namespace {

void check_pixel_args(const Tensor& pred, const Tensor& ref) {
    require_same_shape(pred, ref, "frame_metrics");
    if (pred.ndim() != 4) throw ArgumentError("frame_metrics: expected [F,C,H,W]");
    if (pred.dim(2) < 7 || pred.dim(3) < 7)
        throw ArgumentError("frame_metrics: frames must be at least 7x7 for SSIM");
}

double ssim_channel(const Tensor& a, const Tensor& b, int f, int c) {
    const int H = a.dim(2), W = a.dim(3);
    constexpr int win = 7;
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double acc = 0;
    int count = 0;
    for (int y = 0; y + win <= H; ++y)
        for (int x = 0; x + win <= W; ++x) {
            double ma = 0, mb = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    ma += a.at4(f, c, y + dy, x + dx);
                    mb += b.at4(f, c, y + dy, x + dx);
                }
            ma /= win * win;
            mb /= win * win;
            double va = 0, vb = 0, cov = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double da = a.at4(f, c, y + dy, x + dx) - ma;
                    const double db = b.at4(f, c, y + dy, x + dx) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= win * win - 1;
            vb /= win * win - 1;
            cov /= win * win - 1;
            acc += ((2 * ma * mb + C1) * (2 * cov + C2)) /
                   ((ma * ma + mb * mb + C1) * (va + vb + C2));
            ++count;
        }
    return acc / count;
}

}  // namespace

FrameMetrics frame_metrics(const Tensor& pred, const Tensor& ref) {
    check_pixel_args(pred, ref);
    const int F = pred.dim(0), C = pred.dim(1);
    const int64_t per_frame = pred.numel() / F;

    FrameMetrics m;
    for (int64_t i = 0; i < pred.numel(); ++i) m.l1 += std::abs(pred[i] - ref[i]);
    m.l1 /= static_cast<double>(pred.numel());

    for (int f = 0; f < F; ++f) {
        double mse = 0;
        const double* p = pred.ptr() + f * per_frame;
        const double* r = ref.ptr() + f * per_frame;
        for (int64_t k = 0; k < per_frame; ++k) {
            const double d = p[k] - r[k];
            mse += d * d;
        }
        mse /= static_cast<double>(per_frame);
        m.psnr += 10.0 * std::log10(1.0 / std::max(mse, kPsnrMseFloor));
    }
    m.psnr /= F;

    for (int f = 0; f < F; ++f)
        for (int c = 0; c < C; ++c) m.ssim += ssim_channel(pred, ref, f, c);
    m.ssim /= F * C;
    return m;
}

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Random frozen spatiotemporal features: valid conv with spatial stride 2.
// Each kernel contributes two statistics, a silu-activated mean (appearance)
// and the mean absolute temporal difference of the response (motion energy).
std::vector<double> embed_clip(const VideoClip& clip, uint64_t feature_seed, int feature_dim) {
    const int F = clip.frames, C = clip.channels(), H = clip.height(), W = clip.width();
    constexpr int kt = 3, ks = 5;
    if (F < kt + 1 || H < ks || W < ks)
        throw EvalError("frechet embedding: clip smaller than the feature kernels");

    Rng rng(feature_seed, /*stream=*/0xfeed);
    std::vector<double> out(static_cast<size_t>(feature_dim), 0.0);
    const int n_kernels = (feature_dim + 1) / 2;
    const double scale = 1.0 / std::sqrt(static_cast<double>(C) * kt * ks * ks);
    const int nf = F - kt + 1, ny = (H - ks) / 2 + 1, nx = (W - ks) / 2 + 1;
    std::vector<double> resp(static_cast<size_t>(nf) * ny * nx);

    for (int k = 0; k < n_kernels; ++k) {
        Rng kr = rng.fork(static_cast<uint64_t>(k));
        std::vector<double> w(static_cast<size_t>(C) * kt * ks * ks);
        for (auto& v : w) v = scale * kr.normal();
        const double bias = 0.5 * kr.normal();

        size_t ri = 0;
        for (int f = 0; f + kt <= F; ++f)
            for (int y = 0; y + ks <= H; y += 2)
                for (int x = 0; x + ks <= W; x += 2) {
                    double s = bias;
                    size_t wi = 0;
                    for (int c = 0; c < C; ++c)
                        for (int dt = 0; dt < kt; ++dt)
                            for (int dy = 0; dy < ks; ++dy)
                                for (int dx = 0; dx < ks; ++dx)
                                    s += w[wi++] *
                                         clip.pixels.at4(f + dt, c, y + dy, x + dx);
                    resp[ri++] = s;
                }

        double mean = 0;
        for (double v : resp) mean += silu(v);
        mean /= static_cast<double>(resp.size());
        double motion = 0;
        for (int f = 0; f + 1 < nf; ++f)
            for (int p = 0; p < ny * nx; ++p)
                motion += std::abs(resp[static_cast<size_t>(f + 1) * ny * nx + p] -
                                   resp[static_cast<size_t>(f) * ny * nx + p]);
        motion /= static_cast<double>(nf - 1) * ny * nx;

        out[static_cast<size_t>(2 * k)] = mean;
        if (2 * k + 1 < feature_dim) out[static_cast<size_t>(2 * k + 1)] = motion;
    }
    return out;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double cc = 1.0 / std::sqrt(t * t + 1), ss = t * cc;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = cc * akp - ss * akq;
                    a[static_cast<size_t>(k) * n + q] = ss * akp + cc * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = cc * apk - ss * aqk;
                    a[static_cast<size_t>(q) * n + k] = ss * apk + cc * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs[static_cast<size_t>(k) * n + p];
                    const double vkq = eigvecs[static_cast<size_t>(k) * n + q];
                    eigvecs[static_cast<size_t>(k) * n + p] = cc * vkp - ss * vkq;
                    eigvecs[static_cast<size_t>(k) * n + q] = ss * vkp + cc * vkq;
                }
            }
    }
    eigvals.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
}

std::vector<double> sym_sqrt(const std::vector<double>& m, int n) {
    std::vector<double> vals, vecs;
    jacobi_eigen(m, n, vals, vecs);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < n; ++k)
                s += vecs[static_cast<size_t>(i) * n + k] *
                     std::sqrt(std::max(0.0, vals[static_cast<size_t>(k)])) *
                     vecs[static_cast<size_t>(j) * n + k];
            out[static_cast<size_t>(i) * n + j] = s;
        }
    return out;
}

double trace_sqrt(const std::vector<double>& m, int n) {
    std::vector<double> vals, vecs;
    jacobi_eigen(m, n, vals, vecs);
    double s = 0;
    for (double v : vals) s += std::sqrt(std::max(0.0, v));
    return s;
}

struct GaussianFit {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major d x d
};

GaussianFit fit_gaussian(const std::vector<std::vector<double>>& xs, int d) {
    const int n = static_cast<int>(xs.size());
    GaussianFit g;
    g.mean.assign(static_cast<size_t>(d), 0.0);
    g.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& x : xs)
        for (int i = 0; i < d; ++i) g.mean[static_cast<size_t>(i)] += x[static_cast<size_t>(i)] / n;
    // population normalization keeps the fit invariant under duplicating the set
    for (const auto& x : xs)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                g.cov[static_cast<size_t>(i) * d + j] +=
                    (x[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)]) *
                    (x[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)]) / n;
    return g;
}

}  // namespace

double frechet_feature_distance(const std::vector<VideoClip>& a, const std::vector<VideoClip>& b,
                                uint64_t feature_seed, int feature_dim) {
    const int need = feature_dim + 1;
    if (static_cast<int>(a.size()) < need || static_cast<int>(b.size()) < need)
        throw EvalError("frechet_feature_distance: need at least " + std::to_string(need) +
                        " clips per set (feature dim " + std::to_string(feature_dim) + " + 1)");

    auto embed_set = [&](const std::vector<VideoClip>& clips) {
        std::vector<std::vector<double>> e(clips.size());
        parallel_over(static_cast<int>(clips.size()), fanout(0, static_cast<int>(clips.size())),
                      [&](int i) {
                          e[static_cast<size_t>(i)] =
                              embed_clip(clips[static_cast<size_t>(i)], feature_seed, feature_dim);
                      });
        return e;
    };
    GaussianFit ga = fit_gaussian(embed_set(a), feature_dim);
    GaussianFit gb = fit_gaussian(embed_set(b), feature_dim);

    const int d = feature_dim;
    double mean_term = 0;
    for (int i = 0; i < d; ++i) {
        const double dm = ga.mean[static_cast<size_t>(i)] - gb.mean[static_cast<size_t>(i)];
        mean_term += dm * dm;
    }
    double tra = 0, trb = 0;
    for (int i = 0; i < d; ++i) {
        tra += ga.cov[static_cast<size_t>(i) * d + i];
        trb += gb.cov[static_cast<size_t>(i) * d + i];
    }
    // tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
    std::vector<double> sa = sym_sqrt(ga.cov, d);
    std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0), prod(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k)
                s += sa[static_cast<size_t>(i) * d + k] * gb.cov[static_cast<size_t>(k) * d + j];
            tmp[static_cast<size_t>(i) * d + j] = s;
        }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k)
                s += tmp[static_cast<size_t>(i) * d + k] * sa[static_cast<size_t>(k) * d + j];
            prod[static_cast<size_t>(i) * d + j] = s;
        }
    // symmetrize against rounding before the eigensolve
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double s = 0.5 * (prod[static_cast<size_t>(i) * d + j] +
                                    prod[static_cast<size_t>(j) * d + i]);
            prod[static_cast<size_t>(i) * d + j] = prod[static_cast<size_t>(j) * d + i] = s;
        }
    const double fd = mean_term + tra + trb - 2.0 * trace_sqrt(prod, d);
    return std::max(0.0, fd);
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double na = 0, nb = 0, dot = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na < 1e-24 || nb < 1e-24) return 0.0;  // zero-vector convention
    return dot / std::sqrt(na * nb);
}

}  // namespace

namespace {

FaceFeature frame_face_feature(const VideoClip& clip, int f, const FaceBox& box,
                               const ToyAutoencoder& ae, int crop_size) {
    const int C = clip.channels(), H = clip.height(), W = clip.width();
    if (!box.valid_in(H, W)) throw EvalError("face_identity_similarity: degenerate face box");
    Tensor frame({C, H, W});
    const int64_t per = frame.numel();
    for (int64_t k = 0; k < per; ++k) frame[k] = clip.pixels[f * per + k];
    return extract_face_feature_at(frame, box, ae, crop_size);
}

}  // namespace

double face_identity_similarity(const VideoClip& pred, const VideoClip& ref,
                                const ToyAutoencoder& ae, int crop_size) {
    if (ref.face_track.empty() || pred.face_track.empty())
        throw EvalError("face_identity_similarity: clips must carry face boxes");
    if (pred.frames != ref.frames)
        throw EvalError("face_identity_similarity: frame count mismatch");

    // frame-aligned comparison: the reference feature of frame f comes from
    // the reference clip at the same face location
    double acc = 0;
    for (int f = 0; f < pred.frames; ++f) {
        const FaceBox& box = pred.face_track[static_cast<size_t>(f)];
        FaceFeature pf = frame_face_feature(pred, f, box, ae, crop_size);
        FaceFeature rf = frame_face_feature(ref, f, ref.face_track[static_cast<size_t>(f)], ae,
                                            crop_size);
        acc += cosine(pf.vector, rf.vector);
    }
    return acc / pred.frames;
}

VideoClip clip_from_latents(const LatentVideo& lat, const ToyAutoencoder& ae,
                            const VideoClip& like) {
    VideoClip out;
    out.frames = lat.latents.dim(0);
    out.pixels = decode_latent(lat, ae);
    for (auto& v : out.pixels.data) v = std::clamp(v, 0.0, 1.0);
    out.pose_map = like.pose_map;
    out.reference_frame = like.reference_frame;
    out.face_box = like.face_box;
    out.face_track = like.face_track;
    out.seed = like.seed;
    return out;
}

ConditionBundle condition_from_clip(const VideoClip& clip, const ToyAutoencoder& ae,
                                    int face_crop, bool use_face) {
    ConditionBundle cond;
    Tensor ref_frame({1, clip.channels(), clip.height(), clip.width()});
    ref_frame.data = clip.reference_frame.data;
    Tensor ref_lat = avg_pool_frames(ref_frame, ae.factor);
    cond.reference_latent = Tensor({ref_lat.dim(1), ref_lat.dim(2), ref_lat.dim(3)});
    cond.reference_latent.data = ref_lat.data;
    cond.pose_latents = avg_pool_frames(clip.pose_map, ae.factor);
    FaceFeature ff = extract_face_feature(clip, ae, face_crop);
    cond.face_feature = use_face ? ff.vector : std::vector<double>(ff.vector.size(), 0.0);
    return cond;
}

EvalReport evaluate_suite(const ModelParams& model, const std::vector<VideoClip>& eval_set,
                          const SamplePlan& plan, const EvalContext& ctx) {
    if (eval_set.empty()) throw EvalError("evaluate_suite: empty eval set");
    const int n = static_cast<int>(eval_set.size());

    std::vector<VideoClip> samples(static_cast<size_t>(n));
    std::vector<FrameMetrics> fm(static_cast<size_t>(n));
    std::vector<double> ident(static_cast<size_t>(n), 0.0);
    parallel_over(n, fanout(ctx.threads, n), [&](int i) {
        const VideoClip& gt = eval_set[static_cast<size_t>(i)];
        ConditionBundle cond = condition_from_clip(gt, ctx.ae, ctx.face_crop, ctx.use_face);
        SamplePlan p = plan;
        p.noise_seed = plan.noise_seed + static_cast<uint64_t>(i);
        LatentVideo lat = multistep_sample(
            model, cond, p, ctx.sched, ctx.seg,
            {gt.frames, gt.channels(), gt.height() / ctx.ae.factor, gt.width() / ctx.ae.factor});
        samples[static_cast<size_t>(i)] = clip_from_latents(lat, ctx.ae, gt);
        fm[static_cast<size_t>(i)] =
            frame_metrics(samples[static_cast<size_t>(i)].pixels, gt.pixels);
        ident[static_cast<size_t>(i)] = face_identity_similarity(
            samples[static_cast<size_t>(i)], gt, ctx.ae, ctx.face_crop);
    });

    EvalReport r;
    r.clip_count = n;
    r.feature_seed = ctx.feature_seed;
    r.config_digest = ctx.config_digest;
    for (int i = 0; i < n; ++i) {
        r.l1 += fm[static_cast<size_t>(i)].l1 / n;
        r.psnr += fm[static_cast<size_t>(i)].psnr / n;
        r.ssim += fm[static_cast<size_t>(i)].ssim / n;
        r.identity += ident[static_cast<size_t>(i)] / n;
    }
    r.frechet = frechet_feature_distance(samples, eval_set, ctx.feature_seed, ctx.feature_dim);
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["l1"] = l1;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["frechet"] = frechet;
    j["identity"] = identity;
    j["clip_count"] = clip_count;
    j["feature_seed"] = feature_seed;
    j["config_digest"] = config_digest;
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.l1 = j.at("l1");
    r.psnr = j.at("psnr");
    r.ssim = j.at("ssim");
    r.frechet = j.at("frechet");
    r.identity = j.at("identity");
    r.clip_count = j.at("clip_count");
    r.feature_seed = j.at("feature_seed");
    r.config_digest = j.at("config_digest");
    return r;
}

std::string EvalReport::table(const std::string& row_label) const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %10s %8s %8s %10s %10s\n", "method", "L1", "PSNR",
                  "SSIM", "Frechet", "Identity");
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %10.2e %8.2f %8.4f %10.4f %10.4f\n", row_label.c_str(),
                  l1, psnr, ssim, frechet, identity);
    os << buf;
    return os.str();
}

}  // namespace scd
