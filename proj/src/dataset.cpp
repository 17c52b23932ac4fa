#include "icm/dataset.hpp"

#include <iostream>

#include "icm/errors.hpp"
#include "icm/io.hpp"
#include "icm/rng.hpp"

namespace icm {

DatagenSummary generate_dataset(const DatagenConfig& config,
                                const std::filesystem::path& out_dir) {
    if (config.geometries.empty() || config.modes.empty() || config.materials.empty())
        throw Error("datagen needs geometries, modes and materials");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "materials");
    fs::create_directories(out_dir / "meshes");
    fs::create_directories(out_dir / "fields");

    DatagenSummary summary;
    json manifest;
    manifest["version"] = 1;
    manifest["seed"] = config.seed;

    // Meshes.
    std::vector<Mesh> meshes;
    json mesh_table = json::object();
    for (std::size_t g = 0; g < config.geometries.size(); ++g) {
        PlateGeometry geom;
        geom.L = config.geometries[g].L;
        geom.h = config.geometries[g].h;
        geom.holes = config.geometries[g].holes;
        meshes.push_back(generate_plate_mesh(geom));
        const std::string id = "g" + std::to_string(g);
        const std::string rel = "meshes/" + id + ".json";
        save_json_file(out_dir / rel, mesh_to_json(meshes.back()));
        mesh_table[id] = rel;
    }
    manifest["meshes"] = mesh_table;

    json mode_list = json::array();
    for (const auto& m : config.modes)
        mode_list.push_back({{"mode", load_mode_name(m.mode)},
                             {"u1", m.u1},
                             {"u2", m.u2},
                             {"steps", m.steps}});
    manifest["modes"] = mode_list;

    // Materials and fields. One counter-based stream per material index keeps
    // regeneration byte-identical under the same seed.
    const Rng base(config.seed);
    json samples = json::array();
    int material_index = 0;
    for (const auto& group : config.materials) {
        for (int i = 0; i < group.count; ++i, ++material_index) {
            Rng rng = base.fork(0x6d617431, static_cast<std::uint64_t>(material_index));
            MaterialModel material = sample_material(group.family, group.subset, rng);
            if (group.normalize && group.family == Family::Polynomial)
                material =
                    normalize_polynomial_coefficients(material, config.normalization_seed);

            const std::string id = "m" + std::to_string(material_index);
            const std::string mat_rel = "materials/" + id + ".json";
            save_json_file(out_dir / mat_rel, material_to_json(material));

            const MaterialGradientProvider provider(material);
            json fields = json::array();
            for (std::size_t g = 0; g < meshes.size(); ++g) {
                for (std::size_t mi = 0; mi < config.modes.size(); ++mi) {
                    const auto& mc = config.modes[mi];
                    LoadProgram program;
                    program.mode = mc.mode;
                    program.u1 = mc.u1;
                    program.u2 = mc.u2;
                    program.steps = mc.steps;
                    ++summary.attempted_solves;
                    std::vector<LoadStepResult> steps;
                    try {
                        steps = run_load_program(meshes[g], provider, program);
                    } catch (const Error& e) {
                        ++summary.failed_solves;
                        std::cerr << "[datagen] " << id << " g" << g << " "
                                  << load_mode_name(mc.mode) << " failed: " << e.what()
                                  << "\n";
                        continue;
                    }
                    for (std::size_t k = 0; k < steps.size(); ++k) {
                        StrainField& field = steps[k].field;
                        field.mesh_id = "g" + std::to_string(g);
                        const std::string rel =
                            "fields/" + id + "_g" + std::to_string(g) + "_" +
                            load_mode_name(mc.mode) + "_s" + std::to_string(k + 1) +
                            ".json";
                        save_json_file(out_dir / rel, field_to_json(field));
                        fields.push_back({{"geometry", static_cast<int>(g)},
                                          {"mode", static_cast<int>(mi)},
                                          {"step", static_cast<int>(k + 1)},
                                          {"mesh_id", field.mesh_id},
                                          {"path", rel}});
                    }
                }
            }
            samples.push_back({{"id", id},
                               {"family", family_name(group.family)},
                               {"subset", subset_rule_name(group.subset)},
                               {"material", mat_rel},
                               {"fields", fields}});
        }
    }
    manifest["samples"] = samples;
    summary.manifest_path = out_dir / "manifest.json";
    save_json_file(summary.manifest_path, manifest);
    return summary;
}

std::vector<FieldTokensView> Dataset::views_of(std::size_t sample) const {
    std::vector<FieldTokensView> views;
    const auto& s = samples[sample];
    for (std::size_t f = 0; f < s.fields.size(); ++f) {
        const auto& entry = s.fields[f];
        views.push_back({static_cast<int>(f), entry.geometry, entry.mode, entry.step,
                         &entry.tokens});
    }
    return views;
}

const Mesh& Dataset::mesh_of(const DatasetFieldEntry& entry) const {
    const auto it = meshes.find(entry.mesh_id);
    if (it == meshes.end())
        throw MissingArtifact("mesh '" + entry.mesh_id + "' not in dataset");
    return it->second;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const json manifest = load_json_file(manifest_path);
    const auto root = manifest_path.parent_path();
    Dataset ds;
    for (const auto& [id, rel] : manifest.at("meshes").items())
        ds.meshes.emplace(id, mesh_from_json(load_json_file(root / rel.get<std::string>())));
    for (const auto& s : manifest.at("samples")) {
        DatasetSample sample;
        sample.id = s.at("id");
        sample.material =
            material_from_json(load_json_file(root / s.at("material").get<std::string>()));
        for (const auto& f : s.at("fields")) {
            DatasetFieldEntry entry;
            entry.geometry = f.at("geometry");
            entry.mode = f.at("mode");
            entry.step = f.at("step");
            entry.mesh_id = f.at("mesh_id");
            entry.field = field_from_json(load_json_file(root / f.at("path").get<std::string>()));
            const Mesh& mesh = ds.mesh_of(entry);
            entry.tokens = tokenize_field(mesh, entry.field);
            sample.fields.push_back(std::move(entry));
        }
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

}  // namespace icm
