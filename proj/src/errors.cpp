#include "lacgan/errors.hpp"

namespace lacgan {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Load: return "load error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Geometry: return "geometry error";
    case ErrorKind::Alignment: return "alignment error";
    case ErrorKind::Contract: return "contract violation";
    case ErrorKind::Divergence: return "training divergence";
    case ErrorKind::Metric: return "metric error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Load:
      return 2;
    case ErrorKind::Data:
    case ErrorKind::Shape:
    case ErrorKind::Geometry:
    case ErrorKind::Alignment:
    case ErrorKind::Io:
      return 3;
    case ErrorKind::Divergence:
    case ErrorKind::Metric:
      return 4;
    case ErrorKind::Contract:
      return 1;
  }
  return 1;
}

}  // namespace lacgan
