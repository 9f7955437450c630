#include "ltsrepr/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binio.hpp"

namespace ltsrepr {
namespace {

constexpr std::string_view kCheckpointMagic = "SREPR001";
constexpr std::string_view kSwagMagic = "SWAGDIAG";

struct LayerShape {
  std::uint32_t rows;
  std::uint32_t cols;
};

std::vector<LayerShape> layer_shapes(const ModelParams& p) {
  std::vector<LayerShape> s;
  for (const auto& l : p.theta)
    s.push_back({static_cast<std::uint32_t>(l.weight.rows()),
                 static_cast<std::uint32_t>(l.weight.cols())});
  s.push_back({static_cast<std::uint32_t>(p.phi.weight.rows()),
               static_cast<std::uint32_t>(p.phi.weight.cols())});
  return s;
}

// Writes a flat parameter vector (ModelParams::flatten order) per layer.
void write_layers(std::ostream& out, const std::vector<LayerShape>& shapes,
                  const Vector& flat) {
  Eigen::Index pos = 0;
  for (const auto& s : shapes) {
    binio::write_u32(out, s.rows);
    binio::write_u32(out, s.cols);
    const Eigen::Index n = static_cast<Eigen::Index>(s.rows) * (s.cols + 1);
    for (Eigen::Index i = 0; i < n; ++i)
      binio::write_f32(out, static_cast<float>(flat(pos++)));
  }
}

Vector read_layers(std::istream& in, const std::vector<LayerShape>& shapes) {
  std::size_t total = 0;
  for (const auto& s : shapes) total += static_cast<std::size_t>(s.rows) * (s.cols + 1);
  Vector flat(static_cast<Eigen::Index>(total));
  Eigen::Index pos = 0;
  for (const auto& s : shapes) {
    const std::uint32_t rows = binio::read_u32(in);
    const std::uint32_t cols = binio::read_u32(in);
    require(rows == s.rows && cols == s.cols, ErrorCode::kFormat,
            "layer shape mismatch in checkpoint");
    const Eigen::Index n = static_cast<Eigen::Index>(rows) * (cols + 1);
    for (Eigen::Index i = 0; i < n; ++i) flat(pos++) = binio::read_f32(in);
  }
  return flat;
}

Vector round_f32(const Vector& v) {
  return v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto shapes = layer_shapes(ckpt.params);
  binio::write_magic(out, kCheckpointMagic);
  binio::write_u32(out, kCheckpointVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(shapes.size()));
  write_layers(out, shapes, ckpt.params.flatten());
  if (ckpt.posterior) {
    const SwagPosterior& post = *ckpt.posterior;
    require(post.frozen(), ErrorCode::kPrecondition,
            "only a frozen posterior can be written");
    binio::write_magic(out, kSwagMagic);
    binio::write_u32(out, post.count());
    write_layers(out, shapes, post.first_moment());
    write_layers(out, shapes, post.second_moment());
    write_layers(out, shapes, post.sigma());
  }
  nlohmann::json metadata = ckpt.metadata;
  metadata["activation"] = activation_name(ckpt.params.activation);
  const std::string meta = metadata.dump();
  binio::write_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
}

Checkpoint read_checkpoint(std::istream& in) {
  binio::expect_magic(in, kCheckpointMagic);
  const std::uint32_t version = binio::read_u32(in);
  require(version == kCheckpointVersion, ErrorCode::kFormat,
          "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t n_layers = binio::read_u32(in);
  require(n_layers >= 1 && n_layers < 1024, ErrorCode::kFormat, "bad layer count");

  // Shapes are read first, then the stream is rewound to read the payload.
  const auto payload_start = in.tellg();
  std::vector<LayerShape> shapes;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    LayerShape s{binio::read_u32(in), binio::read_u32(in)};
    require(s.rows >= 1 && s.cols >= 1, ErrorCode::kFormat, "empty layer");
    if (!shapes.empty())
      require(s.cols == shapes.back().rows, ErrorCode::kFormat, "layer shapes do not chain");
    shapes.push_back(s);
    in.seekg(static_cast<std::streamoff>(s.rows) * (s.cols + 1) * 4, std::ios::cur);
    require(static_cast<bool>(in), ErrorCode::kFormat, "truncated checkpoint");
  }
  in.seekg(payload_start);

  Checkpoint ckpt;
  for (std::uint32_t l = 0; l + 1 < n_layers; ++l)
    ckpt.params.theta.push_back({Matrix(shapes[l].rows, shapes[l].cols),
                                 Vector(shapes[l].rows)});
  ckpt.params.phi = {Matrix(shapes.back().rows, shapes.back().cols),
                     Vector(shapes.back().rows)};
  ckpt.params.assign_flat(read_layers(in, shapes));

  // "SWAG" read as a u32 length would be over 1 GB, so four bytes decide.
  const std::string tag = binio::read_bytes(in, 4);
  std::string len_bytes = tag;
  if (tag == kSwagMagic.substr(0, 4)) {
    require(binio::read_bytes(in, 4) == kSwagMagic.substr(4), ErrorCode::kFormat,
            "bad posterior section tag");
    const std::uint32_t count = binio::read_u32(in);
    Vector first = read_layers(in, shapes);
    Vector second = read_layers(in, shapes);
    Vector sigma = read_layers(in, shapes);
    ckpt.posterior = SwagPosterior::from_parts(ckpt.params, count, std::move(first),
                                               std::move(second), std::move(sigma));
    len_bytes = binio::read_bytes(in, 4);
  }
  std::istringstream len_in(len_bytes);
  const std::uint32_t meta_len = binio::read_u32(len_in);
  require(meta_len < (1u << 30), ErrorCode::kFormat, "bad metadata length");
  const std::string meta = binio::read_bytes(in, meta_len);
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad checkpoint metadata: ") + e.what());
  }
  if (ckpt.metadata.contains("activation"))
    ckpt.params.activation = parse_activation(ckpt.metadata["activation"].get<std::string>());
  return ckpt;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ckpt);
  return out.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint(in);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  return read_checkpoint(in);
}

void quantize_to_f32(Checkpoint& ckpt) {
  ckpt.params.assign_flat(round_f32(ckpt.params.flatten()));
  if (ckpt.posterior) {
    const SwagPosterior& p = *ckpt.posterior;
    ckpt.posterior = SwagPosterior::from_parts(ckpt.params, p.count(),
                                               round_f32(p.first_moment()),
                                               round_f32(p.second_moment()),
                                               round_f32(p.sigma()));
  }
}

}  // namespace ltsrepr
