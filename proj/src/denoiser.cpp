// SPDX-License-Identifier: Apache-2.0
#include "fodiff/denoiser.hpp"

#include <algorithm>

namespace fodiff::net {

Variant parse_variant(const std::string& name)
{
  if (name == "uncond")
    return Variant::uncond;
  if (name == "vol")
    return Variant::vol;
  if (name == "vol_enc")
    return Variant::vol_enc;
  if (name == "full")
    return Variant::full;
  throw ConfigError("unknown variant \"" + name + "\" (expected uncond, vol, vol_enc or full)");
}

std::string variant_name(Variant v)
{
  switch (v) {
  case Variant::uncond:
    return "uncond";
  case Variant::vol:
    return "vol";
  case Variant::vol_enc:
    return "vol_enc";
  case Variant::full:
    return "full";
  }
  return "full";
}

bool NetConfig::has_attention(int level) const
{
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void NetConfig::validate() const
{
  if (levels() < 2)
    throw InvalidArgument("NetConfig: at least two levels are required");
  if (base_channels < 1)
    throw InvalidArgument("NetConfig: base channels must be positive");
  for (int l = 0; l < levels(); ++l)
    if (channel_mult[l] < 1 || channels(l) % norm_groups)
      throw InvalidArgument("NetConfig: channels at level " + std::to_string(l) +
                            " must be positive and divisible by norm_groups");
  if (embed_dim < 2 || embed_dim % 4)
    throw InvalidArgument("NetConfig: embedding dimension must be a positive multiple of 4");
  if (attention_levels.empty() || !has_attention(levels() - 1))
    throw InvalidArgument("NetConfig: the coarsest level must have attention");
  for (std::size_t i = 0; i < attention_levels.size(); ++i) {
    if (attention_levels[i] < 0 || attention_levels[i] >= levels())
      throw InvalidArgument("NetConfig: attention level out of range");
    if (i > 0 && attention_levels[i] <= attention_levels[i - 1])
      throw InvalidArgument("NetConfig: attention levels must be strictly ascending");
  }
  const int f = 1 << (levels() - 1);
  if (patch_size < f || patch_size % f || inference_patch < f || inference_patch % f)
    throw InvalidArgument("NetConfig: patch sizes must be multiples of " + std::to_string(f));
  if (tile_overlap < 0 || tile_overlap >= inference_patch)
    throw InvalidArgument("NetConfig: tile overlap must lie in [0, inference_patch)");
}

void NetConfig::apply_variant(Variant v)
{
  use_condition = v != Variant::uncond;
  use_volume_encoding = v == Variant::vol_enc || v == Variant::full;
  use_cross_attention = v == Variant::full;
}

void to_json(nlohmann::json& j, const NetConfig& c)
{
  j = nlohmann::json{{"base_channels", c.base_channels},
                     {"channel_mult", c.channel_mult},
                     {"attention_levels", c.attention_levels},
                     {"embed_dim", c.embed_dim},
                     {"patch_size", c.patch_size},
                     {"inference_patch", c.inference_patch},
                     {"tile_overlap", c.tile_overlap},
                     {"norm_groups", c.norm_groups},
                     {"use_condition", c.use_condition},
                     {"use_volume_encoding", c.use_volume_encoding},
                     {"use_cross_attention", c.use_cross_attention},
                     {"per_channel_order_weight", c.per_channel_order_weight}};
}

void from_json(const nlohmann::json& j, NetConfig& c)
{
  j.at("base_channels").get_to(c.base_channels);
  j.at("channel_mult").get_to(c.channel_mult);
  j.at("attention_levels").get_to(c.attention_levels);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("patch_size").get_to(c.patch_size);
  j.at("inference_patch").get_to(c.inference_patch);
  j.at("tile_overlap").get_to(c.tile_overlap);
  j.at("norm_groups").get_to(c.norm_groups);
  j.at("use_condition").get_to(c.use_condition);
  j.at("use_volume_encoding").get_to(c.use_volume_encoding);
  j.at("use_cross_attention").get_to(c.use_cross_attention);
  j.at("per_channel_order_weight").get_to(c.per_channel_order_weight);
}

} // namespace fodiff::net
