#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icm/field.hpp"
#include "icm/materials.hpp"
#include "icm/mesh.hpp"
#include "icm/solver.hpp"
#include "icm/tokenizer.hpp"

namespace icm {

struct GeometryConfig {
    double L = 1.0;
    double h = 0.09;
    std::vector<HoleSpec> holes;
};

struct ModeConfig {
    LoadMode mode = LoadMode::Uniaxial;
    double u1 = 0.3;
    double u2 = 0.0;
    int steps = 5;
};

struct MaterialGroupConfig {
    Family family = Family::Polynomial;
    SubsetRule subset = SubsetRule::PolyA;
    int count = 1;
    bool normalize = false;
};

struct DatagenConfig {
    std::uint64_t seed = 1;
    std::vector<GeometryConfig> geometries;
    std::vector<ModeConfig> modes;
    std::vector<MaterialGroupConfig> materials;
    std::uint64_t normalization_seed = 1234;
};

struct DatagenSummary {
    int attempted_solves = 0;
    int failed_solves = 0;
    std::filesystem::path manifest_path;
};

// Samples and normalizes materials, meshes the geometries, runs every load
// program and writes materials/, meshes/, fields/ plus manifest.json under
// out_dir. Failed solves are logged and skipped.
DatagenSummary generate_dataset(const DatagenConfig& config,
                                const std::filesystem::path& out_dir);

// --- In-memory dataset ----------------------------------------------------------

struct DatasetFieldEntry {
    int geometry = 0;
    int mode = 0;  // index into the mode list
    int step = 1;
    std::string mesh_id;
    StrainField field;
    std::vector<RawToken> tokens;
};

struct DatasetSample {
    std::string id;
    MaterialModel material;
    std::vector<DatasetFieldEntry> fields;
};

struct Dataset {
    std::map<std::string, Mesh> meshes;
    std::vector<DatasetSample> samples;

    std::vector<FieldTokensView> views_of(std::size_t sample) const;
    const Mesh& mesh_of(const DatasetFieldEntry& entry) const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace icm
