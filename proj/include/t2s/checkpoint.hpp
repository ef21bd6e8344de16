#pragma once

// Model checkpoints as bytes:
//   "T2SC" u32 version u32 kind, config JSON (u32 length + bytes),
//   u32 tensor count, then per tensor: name, u32 rank, u32 dims…, raw f32 bits.
// DVQ-VAE checkpoints append the codebook (codes and EMA state, raw f64 bits).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "t2s/dvq_vae.hpp"
#include "t2s/t2s_gpt.hpp"

namespace t2s::ckpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;
enum class Kind : std::uint32_t { dvq = 1, gpt = 2 };

nlohmann::json to_json(const dvq::DvqVaeConfig& c);
nlohmann::json to_json(const gpt::GptConfig& c);
// Missing keys keep their defaults; unknown keys are a ConfigError.
dvq::DvqVaeConfig dvq_config_from_json(const nlohmann::json& j);
gpt::GptConfig gpt_config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> save(const dvq::DvqVae& model);
std::vector<std::uint8_t> save(const gpt::T2sGpt& model);

// FormatError on corrupt or truncated input and version or kind mismatch;
// ConfigError when `expected` is given and differs from the stored config.
dvq::DvqVae load_dvq(std::span<const std::uint8_t> bytes, const dvq::DvqVaeConfig* expected = nullptr);
gpt::T2sGpt load_gpt(std::span<const std::uint8_t> bytes, const gpt::GptConfig* expected = nullptr);

Kind peek_kind(std::span<const std::uint8_t> bytes);

}  // namespace t2s::ckpt
