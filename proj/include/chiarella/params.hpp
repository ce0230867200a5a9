#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace chiarella {

enum class ModelKind { Linear, Cubic };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Full parameter vector of the market model. All rates are per month,
/// volatilities per sqrt(month), prices and values in log units.
struct ChiarellaParams {
    double kappa = 0.0;    // mean-reversion strength of fundamentalists
    double kappa3 = 0.0;   // cubic mean-reversion coefficient (>= 0)
    double beta = 0.0;     // trend-follower impact
    double gamma = 1.0;    // trend saturation sensitivity (> 0)
    double alpha = 1.0;    // EWMA decay rate of the trend signal, in (0, 1]
    double sigma_n = 0.0;  // noise-trader volatility (>= 0)
    double sigma_v = 0.0;  // value volatility (>= 0)
    double v0 = 0.0;       // initial log-value

    bool linear() const { return kappa3 == 0.0; }
    ModelKind kind() const { return linear() ? ModelKind::Linear : ModelKind::Cubic; }

    /// Throws std::invalid_argument when an invariant is broken.
    /// kappa <= 0 is accepted only together with kappa3 > 0 (cubic model).
    void validate() const;
};

struct SystemState {
    double p = 0.0;  // log-price
    double v = 0.0;  // log-value
    double m = 0.0;  // trend signal
    double t = 0.0;  // time in months

    bool finite() const {
        return std::isfinite(p) && std::isfinite(v) && std::isfinite(m) && std::isfinite(t);
    }
};

}  // namespace chiarella
