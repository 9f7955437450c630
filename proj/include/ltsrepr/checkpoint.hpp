#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "ltsrepr/netcore.hpp"
#include "ltsrepr/swag.hpp"

namespace ltsrepr {

// On-disk model:
//   "SREPR001", u32 version, u32 layer count,
//   per layer: u32 rows, u32 cols, rows*cols f32 weights (row-major), rows f32
//   biases; the classifier is the last layer.
//   Optional "SWAGDIAG", u32 n, then first moment, second moment and sigma,
//   each laid out like the layers above.
//   Trailer: u32 byte length + UTF-8 JSON metadata.
// Payloads are 32-bit, so a checkpoint stores parameters rounded to float.
struct Checkpoint {
  ModelParams params;
  std::optional<SwagPosterior> posterior;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rounds every parameter (and posterior payload) to float precision, giving
// exactly the values a save/load round trip would produce.
void quantize_to_f32(Checkpoint& ckpt);

}  // namespace ltsrepr
