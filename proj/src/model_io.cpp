#include <cmath>

#include "zoomshot/binary_io.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/trainer.hpp"

namespace zoomshot {

ModelScales to_model_scales(const VarianceScales& s) {
  return ModelScales{s.student.scale_factor, s.teacher_img.scale_factor,
                     s.teacher_txt.scale_factor, s.student.target_variance};
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  model.maps.validate();
  binio::ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.maps.m()));
  w.u32(static_cast<std::uint32_t>(model.maps.d()));
  w.u8(model.maps.affine() ? 1 : 0);
  w.f64(model.scales.student);
  w.f64(model.scales.teacher_img);
  w.f64(model.scales.teacher_txt);
  w.f64(model.scales.target_variance);
  auto put = [&w](const auto& mat) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) w.f64(mat(i, j));
  };
  put(model.maps.w_fwd);
  if (model.maps.b_fwd) put(*model.maps.b_fwd);
  put(model.maps.w_inv);
  if (model.maps.b_inv) put(*model.maps.b_inv);
  w.string(model.config_digest);
  return std::move(w).take();
}

namespace {

double read_positive(binio::ByteReader& r, const char* what) {
  const std::size_t at = r.offset();
  const double v = r.f64();
  if (!std::isfinite(v) || !(v > 0.0))
    throw ParseError(ParseFault::BadField, at, std::string(what) + " must be positive and finite");
  return v;
}

template <typename MatrixT>
MatrixT read_matrix(binio::ByteReader& r, Eigen::Index rows, Eigen::Index cols, const char* what) {
  r.require(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols), 8, what);
  MatrixT mat(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const std::size_t at = r.offset();
      const double v = r.f64();
      if (!std::isfinite(v)) throw ParseError(ParseFault::NonFinite, at, what);
      mat(i, j) = v;
    }
  }
  return mat;
}

}  // namespace

Model decode_model(std::span<const std::uint8_t> bytes) {
  binio::ByteReader r(bytes);
  r.expect_magic(kModelMagic);
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32(); version != kModelVersion)
    throw ParseError(ParseFault::BadVersion, version_at, "version " + std::to_string(version));
  const std::size_t dims_at = r.offset();
  const auto m = static_cast<Eigen::Index>(r.u32());
  const auto d = static_cast<Eigen::Index>(r.u32());
  if (m == 0 || d == 0) throw ParseError(ParseFault::BadField, dims_at, "zero map dimension");
  const std::size_t affine_at = r.offset();
  const std::uint8_t affine = r.u8();
  if (affine > 1) throw ParseError(ParseFault::BadField, affine_at, "affine flag " + std::to_string(affine));

  Model model;
  model.scales.student = read_positive(r, "student scale");
  model.scales.teacher_img = read_positive(r, "teacher image scale");
  model.scales.teacher_txt = read_positive(r, "teacher text scale");
  model.scales.target_variance = read_positive(r, "target variance");

  model.maps.w_fwd = read_matrix<Matrix>(r, d, m, "forward weights");
  if (affine) model.maps.b_fwd = read_matrix<Vector>(r, 1, d, "forward bias");
  model.maps.w_inv = read_matrix<Matrix>(r, m, d, "inverse weights");
  if (affine) model.maps.b_inv = read_matrix<Vector>(r, 1, m, "inverse bias");
  const std::uint32_t digest_len = r.u32();
  model.config_digest = r.utf8(digest_len, "config digest");
  r.expect_end();
  return model;
}

void save_model(const LinearMapPair& maps, const VarianceScales& scales,
                const std::string& cfg_digest, const std::filesystem::path& path) {
  binio::write_file(path, encode_model(Model{maps, to_model_scales(scales), cfg_digest}));
}

Model load_model(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  try {
    return decode_model(bytes);
  } catch (const ParseError& e) {
    throw ParseError(e.fault(), e.offset(), path.string());
  }
}

}  // namespace zoomshot
