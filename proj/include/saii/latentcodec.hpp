#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/datakit.hpp"
#include "saii/latent.hpp"
#include "saii/nn/blocks.hpp"

namespace saii::codec {

namespace fs = std::filesystem;

inline constexpr const char* kCodecFormat = "saii-codec/1";

struct CodecConfig {
  int downsample_factor = 4;  ///< f in {2, 4, 8}
  int latent_channels = 3;
  int codebook_size = 512;
  int base_width = 16;
  double commitment_beta = 0.25;
  bool use_adversarial = false;
  double adversarial_weight = 0.1;
  int adversarial_start_epoch = 5;
  bool quantize_on_decode = true;
  double lr = 2e-4;
  int epochs = 20;
  int batch_size = 8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  int levels() const;
  void validate() const;
  nlohmann::json to_json() const;
  static CodecConfig from_json(const nlohmann::json& j);
};

struct Codebook {
  nn::Param vectors;  ///< K x c, row-major
  int size = 0;
  int dim = 0;
  std::vector<std::uint64_t> usage_counts;

  Codebook() = default;
  Codebook(int k, int c) : vectors(static_cast<std::size_t>(k) * c), size(k), dim(c), usage_counts(k, 0) {}
  const float* row(int k) const { return vectors.value.data() + static_cast<std::size_t>(k) * dim; }
  /// Nearest row by Euclidean distance; ties resolve to the lowest index.
  int nearest(const double* v) const;
};

struct QuantizeResult {
  LatentTensor z_q;
  std::vector<int> indices;  ///< row-major over (y, x)
  double vq_loss = 0.0;      ///< mean |sg(z_e) - e|^2
  double commit_loss = 0.0;  ///< mean |z_e - sg(e)|^2 (unweighted)
};

QuantizeResult quantize(const LatentTensor& z_e, const Codebook& book);

class Encoder : public nn::Module {
 public:
  Encoder(const CodecConfig& cfg, std::mt19937_64& rng);
  nn::Tensor forward(const nn::Tensor& x) const;
  nn::Tensor forward_train(const nn::Tensor& x);
  void backward(const nn::Tensor& gy);
  void visit(const std::string& prefix, const nn::Visitor& fn) override;

 private:
  template <class Self>
  static nn::Tensor run(Self& self, const nn::Tensor& x);
  nn::Conv2d conv_in_;
  std::vector<std::unique_ptr<nn::ResBlock>> blocks_;
  std::vector<nn::Conv2d> downs_;
  std::unique_ptr<nn::ResBlock> mid_;
  nn::GroupNorm norm_out_;
  nn::SiLU act_out_;
  nn::Conv2d conv_out_;
};

class Decoder : public nn::Module {
 public:
  Decoder(const CodecConfig& cfg, std::mt19937_64& rng);
  nn::Tensor forward(const nn::Tensor& z) const;
  nn::Tensor forward_train(const nn::Tensor& z);
  nn::Tensor backward(const nn::Tensor& gy);
  void visit(const std::string& prefix, const nn::Visitor& fn) override;

 private:
  template <class Self>
  static nn::Tensor run(Self& self, const nn::Tensor& z);
  nn::Conv2d conv_in_;
  std::unique_ptr<nn::ResBlock> mid_;
  std::vector<nn::Conv2d> ups_;  ///< ups_[i]: width(i+1) -> width(i), after upsampling
  std::vector<std::unique_ptr<nn::ResBlock>> blocks_;
  nn::GroupNorm norm_out_;
  nn::SiLU act_out_;
  nn::Conv2d conv_out_;
};

/// Patch discriminator used for the optional hinge adversarial loss.
class Discriminator : public nn::Module {
 public:
  explicit Discriminator(std::mt19937_64& rng, int width = 16);
  nn::Tensor forward_train(const nn::Tensor& x);
  nn::Tensor backward(const nn::Tensor& gy);
  void visit(const std::string& prefix, const nn::Visitor& fn) override;

 private:
  nn::Conv2d c1_, c2_, c3_;
  nn::BatchNorm2d bn2_;
  nn::LeakyReLU a1_, a2_;
};

/// Encoder E, decoder D and codebook, operating on impedance normalized to [-1, 1].
class Codec {
 public:
  Codec(const CodecConfig& cfg, const data::Normalization& norm);

  /// Pre-quantization latent E(x). Non-divisible inputs are reflect-padded;
  /// the source dims are recorded for decode.
  LatentTensor encode(const Array2D& x_normalized, LatentSpace space = LatentSpace::Impedance) const;
  /// D(z) (quantizing first when configured), cropped to z's source dims.
  Array2D decode(const LatentTensor& z) const;
  QuantizeResult quantize(const LatentTensor& z_e) const { return codec::quantize(z_e, codebook_); }

  nn::Tensor encode_batch(const nn::Tensor& x) const { return encoder_->forward(x); }
  nn::Tensor decode_batch(const nn::Tensor& z) const;
  /// Nearest-code replacement of every spatial vector of a batch.
  nn::Tensor quantize_batch(const nn::Tensor& z, std::vector<int>* indices = nullptr) const;

  /// Diffusion works on latent * latent_scale (about unit variance).
  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) { latent_scale_ = s; }

  const CodecConfig& config() const { return cfg_; }
  const data::Normalization& normalization() const { return norm_; }
  Encoder& encoder() { return *encoder_; }
  Decoder& decoder() { return *decoder_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  /// Serialized checkpoint bytes and their sha256.
  std::string serialize() const;
  std::string hash() const;
  void save(const fs::path& path) const;
  static Codec load(const fs::path& path);

 private:
  CodecConfig cfg_;
  data::Normalization norm_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
  Codebook codebook_;
  double latent_scale_ = 1.0;
};

struct CodecHistory {
  std::vector<double> l1;
  std::vector<double> vq;
  std::vector<double> commit;
  std::vector<double> adv_g;
  std::vector<int> codes_used;
  nlohmann::json to_json() const;
};

struct CodecTrainResult {
  Codec codec;
  CodecHistory history;
};

/// Trains on the manifest's impedance entries (normalized with the manifest's
/// statistics). Loss = L1 + vq + beta * commit (+ hinge adversarial term).
/// Throws NumericalError on divergence.
CodecTrainResult train_codec(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                             const CodecConfig& cfg);

/// Same, on in-memory normalized fields.
CodecTrainResult train_codec(const std::vector<Array2D>& fields, const data::Normalization& norm,
                             const CodecConfig& cfg);

/// Mean reconstruction PSNR (dB, peak = range of each field) of decode(encode(x)).
double reconstruction_psnr(const Codec& codec, const std::vector<Array2D>& fields);

}  // namespace saii::codec
