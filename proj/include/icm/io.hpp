#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/diffusion.hpp"
#include "icm/field.hpp"
#include "icm/materials.hpp"
#include "icm/mesh.hpp"
#include "icm/network.hpp"
#include "icm/tokenizer.hpp"
#include "icm/training.hpp"

namespace icm {

using json = nlohmann::json;

// --- JSON codecs -------------------------------------------------------------

json material_to_json(const MaterialModel& m);
MaterialModel material_from_json(const json& j);

json mesh_to_json(const Mesh& mesh);
Mesh mesh_from_json(const json& j);

json field_to_json(const StrainField& field);
StrainField field_from_json(const json& j);

json network_config_to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const json& j);

json load_json_file(const std::filesystem::path& path);
void save_json_file(const std::filesystem::path& path, const json& j);

// --- Binary artifacts ----------------------------------------------------------

// Deformation-token dump: magic "ICMT", version u32, token count u32; per
// token {node u32, subtoken count u32}, per subtoken 8 little-endian doubles
// (A_bar row-major, I_hat, raw I).
void write_token_dump(const std::filesystem::path& path, const Context& ctx);
Context read_token_dump(const std::filesystem::path& path);

// Diffusion-token dump: same frame with magic "DIFT"; per subtoken 6 doubles
// (A row-major, element concentration, b of the owning token).
void write_diffusion_dump(const std::filesystem::path& path,
                          std::span<const DiffusionToken> tokens);

// Concentration series: u64 header length + JSON header + per-step nodal
// doubles, little endian.
void write_concentration_series(const std::filesystem::path& path,
                                const DiffusionSeries& series,
                                const std::string& mesh_id);
DiffusionSeries read_concentration_series(const std::filesystem::path& path);

// Checkpoint: u64 header length + JSON header {format_version, config,
// manifest: [{name, rows, cols}]} + little-endian doubles in manifest order.
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config,
                     const ParameterSet& params, const std::string& model_kind = "icm");
struct Checkpoint {
    NetworkConfig config;
    ParameterSet params;
    std::string model_kind;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_loss_curve_csv(const std::filesystem::path& path,
                          std::span<const LossCurveRow> curve);

}  // namespace icm
