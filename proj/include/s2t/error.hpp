#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace s2t {

enum class Errc {
  malformed_container,
  unsupported_format,
  shape_mismatch,
  degenerate_batch,
  negative_input,
  invalid_spec,
  io_failure,
  bad_magic,
  version_mismatch,
  checksum_mismatch,
  tensor_shape_mismatch,
  missing_split_lists,
  empty_dataset,
  noise_too_short,
  zero_signal_power,
  invalid_config,
  non_finite_loss,
  engine_stopped,
  bind_failure,
  checkpoint_load_failure,
  protocol_error,
};

constexpr std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::malformed_container: return "MalformedContainer";
    case Errc::unsupported_format: return "UnsupportedFormat";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::degenerate_batch: return "DegenerateBatch";
    case Errc::negative_input: return "NegativeInput";
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::io_failure: return "IOFailure";
    case Errc::bad_magic: return "BadMagic";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::checksum_mismatch: return "ChecksumMismatch";
    case Errc::tensor_shape_mismatch: return "TensorShapeMismatch";
    case Errc::missing_split_lists: return "MissingSplitLists";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::noise_too_short: return "NoiseTooShort";
    case Errc::zero_signal_power: return "ZeroSignalPower";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::engine_stopped: return "EngineStopped";
    case Errc::bind_failure: return "BindFailure";
    case Errc::checkpoint_load_failure: return "CheckpointLoadFailure";
    case Errc::protocol_error: return "ProtocolError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace s2t
