#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "skyhdr/autodiff.hpp"

namespace skyhdr {

/// Architecture of the two-headed LDR -> HDR autoencoder. The decoder mirrors
/// the encoder; the last deconvolution produces the 3-channel panorama.
struct NetConfig {
    std::array<int, 4> encoder_widths{64, 128, 256, 256};
    std::array<int, 4> encoder_kernels{5, 5, 3, 3};
    int latent_dim = 64;
    std::vector<int> elevation_hidden{32, 16};
    int domain_hidden = 32;
    int input_height = 64;
    int input_width = 128;
    bool with_discriminator = false;

    void validate() const;
    /// Canonical text form; round-trips through parse().
    std::string describe() const;
    static NetConfig parse(std::string_view text);
    std::uint64_t hash() const;

    int bottleneck_height() const { return input_height / 16; }
    int bottleneck_width() const { return input_width / 16; }
};

struct ParamBlock {
    std::string name;
    ad::Tensor<float> value;
    bool trainable = true;  ///< false for batchnorm running statistics
};

struct ModelParams {
    NetConfig config;
    std::vector<ParamBlock> blocks;

    int index(std::string_view name) const;  ///< -1 when absent
    const ParamBlock& get(std::string_view name) const;
    ParamBlock& get(std::string_view name);
    std::size_t trainable_scalars() const;
    bool operator==(const ModelParams& other) const;
};

/// Number of trainable scalars implied by a config (formula in docs/architecture.md).
std::size_t parameter_count(const NetConfig& cfg);

/// He-uniform weights, zero biases, identity batchnorm. The HDR output bias
/// starts at -3 so that ELU(x)+1 begins near typical tonemapped sky values.
ModelParams init_params(const NetConfig& cfg, std::uint64_t seed);

/// Parameters registered on a tape. Running statistics are copied so that
/// train-mode forwards can update them; write_back_stats() commits them.
template <typename T>
struct Bound {
    std::vector<ad::Var> vars;           ///< per block; invalid for statistics
    std::vector<ad::Tensor<T>> stats;    ///< per block; empty for trainable blocks
    bool update_stats = true;
};

template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ModelParams& params);
void write_back_stats(ModelParams& params, const Bound<float>& bound);

template <typename T>
struct NetOutputs {
    ad::Var hdr;        ///< (N,3,H,W) tonemapped-domain prediction, >= 0
    ad::Var elevation;  ///< (N,1) radians
    ad::Var latent;     ///< (N,latent_dim)
    std::array<ad::Var, 4> encoder;           ///< post-activation conv outputs
    std::array<ad::Var, 4> decoder_pre_skip;  ///< decoder features before the skip add
    std::array<ad::Var, 4> decoder_input;     ///< what each deconvolution consumes
};

/// input: (N,3,H,W) LDR codes / 255, sun-centred.
template <typename T>
NetOutputs<T> forward(ad::Tape<T>& tape, Bound<T>& bound, const ModelParams& params,
                      ad::Var input, ad::Mode mode);

/// Domain classifier on the latent code: GRL -> FC -> ELU -> FC(2).
template <typename T>
ad::Var forward_domain(ad::Tape<T>& tape, Bound<T>& bound, const ModelParams& params,
                       ad::Var latent, T lambda_grl);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
std::string encode_checkpoint(const ModelParams& params);
/// Reads the architecture from the file.
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Additionally requires the stored config hash to equal expected.hash().
ModelParams load_checkpoint(const std::filesystem::path& path, const NetConfig& expected);
ModelParams decode_checkpoint(std::string_view bytes);

}  // namespace skyhdr
