#include "ktg/gates.hpp"

#include <string>

#include "ktg/error.hpp"

namespace ktg {

namespace {

void check_context(const GateContext& ctx) {
    if (ctx.total_iterations <= 0) {
        throw Error(ErrorKind::InvalidContext, "total_iterations must be >= 1");
    }
    if (ctx.iteration < 0 || ctx.iteration > ctx.total_iterations) {
        throw Error(ErrorKind::InvalidContext, "iteration " + std::to_string(ctx.iteration) + " outside [0, " +
                                                   std::to_string(ctx.total_iterations) + "]");
    }
}

}  // namespace

std::vector<double> gate_weights(GateKind kind, std::size_t batch, const GateContext& ctx) {
    check_context(ctx);
    GateKind effective = kind;
    if (kind == GateKind::Correct && ctx.label_source) effective = GateKind::Through;

    switch (effective) {
        case GateKind::Through:
            return std::vector<double>(batch, 1.0);
        case GateKind::Cutoff:
            return std::vector<double>(batch, 0.0);
        case GateKind::Linear: {
            const double ratio = static_cast<double>(ctx.iteration) / static_cast<double>(ctx.total_iterations);
            return std::vector<double>(batch, ratio);
        }
        case GateKind::Correct: {
            if (ctx.source_correct.size() != batch) {
                throw Error(ErrorKind::Shape, "source_correct has " + std::to_string(ctx.source_correct.size()) +
                                                  " entries for a batch of " + std::to_string(batch));
            }
            std::vector<double> w(batch);
            for (std::size_t n = 0; n < batch; ++n) w[n] = ctx.source_correct[n] ? 1.0 : 0.0;
            return w;
        }
    }
    return std::vector<double>(batch, 0.0);
}

std::vector<double> apply_gate(GateKind kind, std::span<const double> losses, const GateContext& ctx) {
    const auto w = gate_weights(kind, losses.size(), ctx);
    std::vector<double> out(losses.size());
    for (std::size_t n = 0; n < losses.size(); ++n) {
        // Cutoff and rejected samples are exact zeros, not 0 * a.
        out[n] = w[n] == 0.0 ? 0.0 : (w[n] == 1.0 ? losses[n] : w[n] * losses[n]);
    }
    return out;
}

}  // namespace ktg
