#include "segfuse/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace segfuse {

namespace {

void check_same_size(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(op) + ": mask sizes differ, " + std::to_string(a.width) +
                         "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) +
                         "x" + std::to_string(b.height));
}

}  // namespace

double precision(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_size(pred, gt, "precision");
    std::int64_t agree = 0;
    for (size_t i = 0; i < pred.pixels.size(); ++i)
        if ((pred.pixels[i] != 0) == (gt.pixels[i] != 0)) ++agree;
    return static_cast<double>(agree) / static_cast<double>(pred.pixels.size());
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_size(pred, gt, "iou");
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool p = pred.pixels[i] != 0, g = gt.pixels[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

SequenceStats sequence_stats(std::vector<double> per_frame) {
    SequenceStats s;
    s.per_frame = std::move(per_frame);
    const size_t n = s.per_frame.size();
    if (n == 0) return s;
    double total = 0.0;
    std::int64_t above = 0;
    for (double v : s.per_frame) {
        total += v;
        if (v > 0.5) ++above;  // strictly greater
    }
    s.mean = total / n;
    s.recall = static_cast<double>(above) / n;
    if (n >= 4) {
        // Contiguous quartile bins with edges rounded down.
        auto bin_mean = [&](size_t k) {
            const size_t lo = k * n / 4, hi = (k + 1) * n / 4;
            double t = 0.0;
            for (size_t i = lo; i < hi; ++i) t += s.per_frame[i];
            return t / (hi - lo);
        };
        s.decay = bin_mean(0) - bin_mean(3);
    }
    return s;
}

std::vector<std::uint8_t> boundary_pixels(const BinaryMask& m) {
    std::vector<std::uint8_t> b(m.pixels.size(), 0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            const bool edge = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 ||
                              !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) ||
                              !m.at(x, y + 1);
            if (edge) b[static_cast<size_t>(y) * m.width + x] = 1;
        }
    return b;
}

// Chebyshev dilation by `tol` (square structuring element).
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& b, int w, int h, int tol) {
    if (tol <= 0) return b;
    std::vector<std::uint8_t> out(b.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!b[static_cast<size_t>(y) * w + x]) continue;
            const int x0 = std::max(0, x - tol), x1 = std::min(w - 1, x + tol);
            const int y0 = std::max(0, y - tol), y1 = std::min(h - 1, y + tol);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) out[static_cast<size_t>(yy) * w + xx] = 1;
        }
    return out;
}

}  // namespace

double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance_px) {
    check_same_size(pred, gt, "boundary_f");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    std::int64_t np = 0, ng = 0;
    for (auto v : bp) np += v;
    for (auto v : bg) ng += v;
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const auto bp_d = dilate(bp, pred.width, pred.height, tolerance_px);
    const auto bg_d = dilate(bg, pred.width, pred.height, tolerance_px);
    std::int64_t p_hit = 0, g_hit = 0;
    for (size_t i = 0; i < bp.size(); ++i) {
        if (bp[i] && bg_d[i]) ++p_hit;
        if (bg[i] && bp_d[i]) ++g_hit;
    }
    const double p = static_cast<double>(p_hit) / np;
    const double r = static_cast<double>(g_hit) / ng;
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

int default_boundary_tolerance(int width, int height) {
    const double diag = std::hypot(width, height);
    return std::max(1, static_cast<int>(std::lround(0.008 * diag)));
}

SequenceStats davis_j(const std::vector<BinaryMask>& pred_seq,
                      const std::vector<BinaryMask>& gt_seq) {
    if (pred_seq.size() != gt_seq.size())
        throw ShapeError("davis_j: sequence lengths differ");
    std::vector<double> per_frame;
    for (size_t t = 1; t < pred_seq.size(); ++t)
        per_frame.push_back(iou(pred_seq[t], gt_seq[t]));
    return sequence_stats(std::move(per_frame));
}

SequenceStats davis_f(const std::vector<BinaryMask>& pred_seq,
                      const std::vector<BinaryMask>& gt_seq, int tolerance_px) {
    if (pred_seq.size() != gt_seq.size())
        throw ShapeError("davis_f: sequence lengths differ");
    std::vector<double> per_frame;
    for (size_t t = 1; t < pred_seq.size(); ++t)
        per_frame.push_back(boundary_f(pred_seq[t], gt_seq[t], tolerance_px));
    return sequence_stats(std::move(per_frame));
}

MetricsReport build_report(const std::string& model_name, const std::string& split,
                           const std::vector<ClipEvaluation>& evaluations) {
    if (evaluations.empty()) throw ConfigError("build_report: empty evaluation set");
    MetricsReport r;
    r.model_name = model_name;
    r.split = split;
    double psum = 0.0, isum = 0.0;
    double jm = 0, jr = 0, jd = 0, fm = 0, fr = 0, fd = 0;
    int nj = 0, njd = 0, nf = 0, nfd = 0;
    for (const auto& e : evaluations) {
        psum += e.precision;
        isum += e.iou;
        if (e.j) {
            jm += e.j->mean;
            jr += e.j->recall;
            ++nj;
            if (e.j->decay) {
                jd += *e.j->decay;
                ++njd;
            }
        }
        if (e.f) {
            fm += e.f->mean;
            fr += e.f->recall;
            ++nf;
            if (e.f->decay) {
                fd += *e.f->decay;
                ++nfd;
            }
        }
    }
    const double n = static_cast<double>(evaluations.size());
    r.precision = psum / n;
    r.iou = isum / n;
    if (nj) {
        r.j_mean = jm / nj;
        r.j_recall = jr / nj;
        if (njd) r.j_decay = jd / njd;
    }
    if (nf) {
        r.f_mean = fm / nf;
        r.f_recall = fr / nf;
        if (nfd) r.f_decay = fd / nfd;
    }
    return r;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["model_name"] = report.model_name;
    j["split"] = report.split;
    j["precision"] = report.precision;
    j["iou"] = report.iou;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("j_mean", report.j_mean);
    put("j_recall", report.j_recall);
    put("j_decay", report.j_decay);
    put("f_mean", report.f_mean);
    put("f_recall", report.f_recall);
    put("f_decay", report.f_decay);
    return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    MetricsReport r;
    r.model_name = j.at("model_name");
    r.split = j.at("split");
    r.precision = j.at("precision");
    r.iou = j.at("iou");
    auto get = [&](const char* key) -> std::optional<double> {
        if (j.contains(key)) return j.at(key).get<double>();
        return std::nullopt;
    };
    r.j_mean = get("j_mean");
    r.j_recall = get("j_recall");
    r.j_decay = get("j_decay");
    r.f_mean = get("f_mean");
    r.f_recall = get("f_recall");
    r.f_decay = get("f_decay");
    return r;
}

}  // namespace segfuse
