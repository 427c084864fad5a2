#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segfuse/image.hpp"

namespace segfuse {

// Fraction of pixels where pred == gt, counting both classes.
double precision(const BinaryMask& pred, const BinaryMask& gt);

// Foreground intersection over union. Both masks empty -> 1.0; exactly one
// empty -> 0.0.
double iou(const BinaryMask& pred, const BinaryMask& gt);

struct SequenceStats {
    double mean = 0.0;
    double recall = 0.0;                 // fraction of frames with value > 0.5
    std::optional<double> decay;         // first minus last temporal quartile
    std::vector<double> per_frame;       // first annotated frame excluded
};

// Region similarity over a propagated sequence. The first frame is given at
// inference and excluded from the statistics. Decay needs >= 4 scored frames.
SequenceStats davis_j(const std::vector<BinaryMask>& pred_seq,
                      const std::vector<BinaryMask>& gt_seq);

// Boundary F-measure under a Chebyshev pixel tolerance.
SequenceStats davis_f(const std::vector<BinaryMask>& pred_seq,
                      const std::vector<BinaryMask>& gt_seq, int tolerance_px);

// Per-frame boundary F for one mask pair (exposed for tests).
double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance_px);

// Benchmark-convention default: ~0.8% of the image diagonal, at least 1 px.
int default_boundary_tolerance(int width, int height);

struct MetricsReport {
    std::string model_name;
    std::string split;
    double precision = 0.0;
    double iou = 0.0;
    std::optional<double> j_mean, j_recall, j_decay;
    std::optional<double> f_mean, f_recall, f_decay;
};

struct ClipEvaluation {
    double precision = 0.0;
    double iou = 0.0;
    std::optional<SequenceStats> j;
    std::optional<SequenceStats> f;
};

// Dataset-level report: arithmetic mean of per-clip numbers.
MetricsReport build_report(const std::string& model_name, const std::string& split,
                           const std::vector<ClipEvaluation>& evaluations);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

}  // namespace segfuse
