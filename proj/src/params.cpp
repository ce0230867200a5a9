#include "chiarella/params.hpp"

#include <stdexcept>

namespace chiarella {

std::string to_string(ModelKind kind) {
    return kind == ModelKind::Linear ? "linear" : "cubic";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear") return ModelKind::Linear;
    if (s == "cubic") return ModelKind::Cubic;
    throw std::invalid_argument("unknown model kind: " + s);
}

void ChiarellaParams::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("alpha must lie in (0, 1]");
    if (!(kappa3 >= 0.0))
        throw std::invalid_argument("kappa3 must be >= 0");
    if (!(sigma_n >= 0.0))
        throw std::invalid_argument("sigma_n must be >= 0");
    if (!(sigma_v >= 0.0))
        throw std::invalid_argument("sigma_v must be >= 0");
    if (!(gamma > 0.0))
        throw std::invalid_argument("gamma must be > 0");
    if (kappa <= 0.0 && kappa3 == 0.0)
        throw std::invalid_argument("kappa <= 0 requires kappa3 > 0 (cubic model)");
    if (!std::isfinite(kappa) || !std::isfinite(beta) || !std::isfinite(v0))
        throw std::invalid_argument("parameters must be finite");
}

}  // namespace chiarella
