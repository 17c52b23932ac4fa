#include "icm/io.hpp"

#include <cstring>
#include <fstream>

#include "icm/errors.hpp"

namespace icm {

namespace {

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("unexpected end of file");
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open: " + path.string());
    return in;
}

}  // namespace

json material_to_json(const MaterialModel& m) {
    json params = json::object();
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, PolynomialParams>) {
                for (int idx = 0; idx < 27; ++idx) {
                    int i, j;
                    cij_from_index(idx, i, j);
                    params["C" + std::to_string(i) + std::to_string(j)] =
                        p.c[static_cast<std::size_t>(idx)];
                }
                for (int mth = 0; mth < 4; ++mth)
                    params["D" + std::to_string(mth + 1)] =
                        p.d[static_cast<std::size_t>(mth)];
            } else if constexpr (std::is_same_v<T, OgdenParams>) {
                for (int k = 0; k < 6; ++k) {
                    params["mu" + std::to_string(k + 1)] = p.mu[static_cast<std::size_t>(k)];
                    params["alpha" + std::to_string(k + 1)] =
                        p.alpha[static_cast<std::size_t>(k)];
                }
                for (int mth = 0; mth < 4; ++mth)
                    params["D" + std::to_string(mth + 1)] =
                        p.d[static_cast<std::size_t>(mth)];
            } else if constexpr (std::is_same_v<T, PucciSaccomandiParams>) {
                params["mu"] = p.mu;
                params["Jm"] = p.Jm;
                params["C2"] = p.C2;
                params["D"] = p.D;
            } else if constexpr (std::is_same_v<T, ExpLnParams>) {
                params["mu"] = p.mu;
                params["a"] = p.a;
                params["b"] = p.b;
                params["D"] = p.D;
            } else {
                params["mu"] = p.mu;
                params["lambda_m"] = p.lambda_m;
                params["a"] = p.a;
                params["beta"] = p.beta;
                params["D"] = p.D;
            }
        },
        m.params);
    return json{{"family", family_name(m.family())}, {"params", params}};
}

MaterialModel material_from_json(const json& j) {
    const Family fam = family_from_name(j.at("family").get<std::string>());
    const json& p = j.at("params");
    switch (fam) {
        case Family::Polynomial: {
            PolynomialParams out;
            for (int idx = 0; idx < 27; ++idx) {
                int i, jj;
                cij_from_index(idx, i, jj);
                const std::string key = "C" + std::to_string(i) + std::to_string(jj);
                if (p.contains(key)) out.c[static_cast<std::size_t>(idx)] = p.at(key);
            }
            for (int mth = 0; mth < 4; ++mth) {
                const std::string key = "D" + std::to_string(mth + 1);
                if (p.contains(key)) out.d[static_cast<std::size_t>(mth)] = p.at(key);
            }
            return MaterialModel{out};
        }
        case Family::Ogden: {
            OgdenParams out;
            for (int k = 0; k < 6; ++k) {
                out.mu[static_cast<std::size_t>(k)] =
                    p.value("mu" + std::to_string(k + 1), 0.0);
                out.alpha[static_cast<std::size_t>(k)] =
                    p.value("alpha" + std::to_string(k + 1), 2.0);
            }
            for (int mth = 0; mth < 4; ++mth)
                out.d[static_cast<std::size_t>(mth)] =
                    p.value("D" + std::to_string(mth + 1), 0.0);
            return MaterialModel{out};
        }
        case Family::PucciSaccomandi: {
            PucciSaccomandiParams out;
            out.mu = p.at("mu");
            out.Jm = p.at("Jm");
            out.C2 = p.at("C2");
            out.D = p.at("D");
            return MaterialModel{out};
        }
        case Family::ExpLn: {
            ExpLnParams out;
            out.mu = p.at("mu");
            out.a = p.at("a");
            out.b = p.at("b");
            out.D = p.at("D");
            return MaterialModel{out};
        }
        case Family::VanDerWaals: {
            VanDerWaalsParams out;
            out.mu = p.at("mu");
            out.lambda_m = p.at("lambda_m");
            out.a = p.at("a");
            out.beta = p.at("beta");
            out.D = p.at("D");
            return MaterialModel{out};
        }
    }
    throw Error("bad family");
}

json mesh_to_json(const Mesh& mesh) {
    json nodes = json::array();
    for (const auto& X : mesh.nodes) nodes.push_back({X.x(), X.y()});
    json tris = json::array();
    for (const auto& t : mesh.triangles) tris.push_back({t[0], t[1], t[2]});
    json sets = json::object();
    for (const auto& [name, set] : mesh.boundary_sets) sets[name] = set;
    return json{{"nodes", nodes}, {"triangles", tris}, {"boundary_sets", sets}};
}

Mesh mesh_from_json(const json& j) {
    Mesh mesh;
    for (const auto& n : j.at("nodes"))
        mesh.nodes.emplace_back(n.at(0).get<double>(), n.at(1).get<double>());
    for (const auto& t : j.at("triangles"))
        mesh.triangles.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    for (const auto& [name, set] : j.at("boundary_sets").items())
        mesh.boundary_sets[name] = set.get<std::vector<int>>();
    mesh.finalize();
    return mesh;
}

json field_to_json(const StrainField& field) {
    json disp = json::array();
    for (const auto& u : field.displacements) disp.push_back({u.x(), u.y()});
    json bcs = json::array();
    for (const auto& bc : field.bcs)
        bcs.push_back({{"set", bc.set},
                       {"direction", {bc.direction.x(), bc.direction.y()}},
                       {"force", bc.force}});
    return json{{"mesh", field.mesh_id}, {"displacements", disp}, {"bcs", bcs}};
}

StrainField field_from_json(const json& j) {
    StrainField field;
    field.mesh_id = j.value("mesh", "");
    for (const auto& u : j.at("displacements"))
        field.displacements.emplace_back(u.at(0).get<double>(), u.at(1).get<double>());
    for (const auto& bc : j.value("bcs", json::array())) {
        BoundaryCondition out;
        out.set = bc.at("set");
        out.direction = {bc.at("direction").at(0).get<double>(),
                         bc.at("direction").at(1).get<double>()};
        out.force = bc.at("force");
        field.bcs.push_back(out);
    }
    return field;
}

json network_config_to_json(const NetworkConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"head_count", c.head_count},
                {"subtoken_blocks", c.subtoken_blocks},
                {"main_blocks", c.main_blocks},
                {"ffn_hidden", c.ffn_hidden},
                {"init_seed", c.init_seed}};
}

NetworkConfig network_config_from_json(const json& j) {
    NetworkConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.head_count = j.value("head_count", c.head_count);
    c.subtoken_blocks = j.value("subtoken_blocks", c.subtoken_blocks);
    c.main_blocks = j.value("main_blocks", c.main_blocks);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.init_seed = j.value("init_seed", c.init_seed);
    return c;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open: " + path.string());
    json j;
    in >> j;
    return j;
}

void save_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

void write_token_dump(const std::filesystem::path& path, const Context& ctx) {
    std::ofstream out = open_out(path);
    write_bytes(out, "ICMT", 4);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ctx.tokens.size()));
    for (const auto& tok : ctx.tokens) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.node));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.count));
        for (int s = tok.first; s < tok.first + tok.count; ++s) {
            const auto& sub = ctx.subs[static_cast<std::size_t>(s)];
            for (double v : sub.A_bar) write_pod(out, v);
            const auto& hat = ctx.query_hat[static_cast<std::size_t>(sub.query)];
            write_pod(out, hat[0]);
            write_pod(out, hat[1]);
            const auto& raw = ctx.query_raw[static_cast<std::size_t>(sub.query)];
            write_pod(out, raw.i1);
            write_pod(out, raw.i3);
        }
    }
}

Context read_token_dump(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ICMT", 4) != 0)
        throw Error("not a token dump: " + path.string());
    const auto version = read_pod<std::uint32_t>(in);
    if (version != 1) throw Error("unsupported token dump version");
    const auto count = read_pod<std::uint32_t>(in);
    Context ctx;
    ctx.inv_scale = 1.0;
    for (std::uint32_t t = 0; t < count; ++t) {
        ContextToken tok;
        tok.node = static_cast<int>(read_pod<std::uint32_t>(in));
        tok.count = static_cast<int>(read_pod<std::uint32_t>(in));
        tok.first = static_cast<int>(ctx.subs.size());
        for (int s = 0; s < tok.count; ++s) {
            ContextSubtoken sub;
            for (double& v : sub.A_bar) v = read_pod<double>(in);
            sub.A_raw = sub.A_bar;  // raw coefficients are not stored in dumps
            const double h1 = read_pod<double>(in);
            const double h3 = read_pod<double>(in);
            const double r1 = read_pod<double>(in);
            const double r3 = read_pod<double>(in);
            sub.query = ctx.query_count();
            ctx.query_hat.push_back({h1, h3});
            ctx.query_raw.push_back({r1, r3});
            ctx.subs.push_back(sub);
        }
        ctx.tokens.push_back(tok);
    }
    return ctx;
}

void write_diffusion_dump(const std::filesystem::path& path,
                          std::span<const DiffusionToken> tokens) {
    std::ofstream out = open_out(path);
    write_bytes(out, "DIFT", 4);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tokens.size()));
    for (const auto& tok : tokens) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.node));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.subs.size()));
        for (const auto& sub : tok.subs) {
            write_pod(out, sub.A(0, 0));
            write_pod(out, sub.A(0, 1));
            write_pod(out, sub.A(1, 0));
            write_pod(out, sub.A(1, 1));
            write_pod(out, sub.c_elem);
            write_pod(out, tok.b);
        }
    }
}

void write_concentration_series(const std::filesystem::path& path,
                                const DiffusionSeries& series,
                                const std::string& mesh_id) {
    const std::size_t nodes =
        series.concentration.empty() ? 0 : series.concentration[0].size();
    const json header{{"mesh", mesh_id},
                      {"node_count", nodes},
                      {"step_count", series.concentration.size()},
                      {"dt", series.dt}};
    const std::string hs = header.dump();
    std::ofstream out = open_out(path);
    write_pod<std::uint64_t>(out, hs.size());
    write_bytes(out, hs.data(), hs.size());
    for (const auto& c : series.concentration)
        write_bytes(out, c.data(), c.size() * sizeof(double));
}

DiffusionSeries read_concentration_series(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    const auto len = read_pod<std::uint64_t>(in);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    const json header = json::parse(hs);
    const std::size_t nodes = header.at("node_count");
    const std::size_t steps = header.at("step_count");
    DiffusionSeries series;
    series.dt = header.at("dt").get<std::vector<double>>();
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> c(nodes);
        in.read(reinterpret_cast<char*>(c.data()),
                static_cast<std::streamsize>(nodes * sizeof(double)));
        if (!in) throw Error("truncated concentration series");
        series.concentration.push_back(std::move(c));
    }
    return series;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config,
                     const ParameterSet& params, const std::string& model_kind) {
    validate_shapes(params, config);
    const ParamLayout layout = make_layout(config);
    json manifest = json::array();
    for (const auto& e : layout.entries)
        manifest.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
    const json header{{"format_version", 1},
                      {"model_kind", model_kind},
                      {"config", network_config_to_json(config)},
                      {"manifest", manifest}};
    const std::string hs = header.dump();
    std::ofstream out = open_out(path);
    write_pod<std::uint64_t>(out, hs.size());
    write_bytes(out, hs.data(), hs.size());
    for (const auto& t : params.tensors)
        write_bytes(out, t.a.data(), t.a.size() * sizeof(double));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    const auto len = read_pod<std::uint64_t>(in);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("truncated checkpoint header");
    const json header = json::parse(hs);
    if (header.at("format_version").get<int>() != 1)
        throw Error("unsupported checkpoint version");

    Checkpoint ckpt;
    ckpt.model_kind = header.value("model_kind", "icm");
    ckpt.config = network_config_from_json(header.at("config"));
    const ParamLayout layout = make_layout(ckpt.config);
    const json& manifest = header.at("manifest");
    if (manifest.size() != layout.entries.size())
        throw ShapeMismatch("checkpoint manifest does not match the config");
    for (std::size_t i = 0; i < layout.entries.size(); ++i) {
        const auto& e = manifest.at(i);
        if (e.at("name") != layout.entries[i].name ||
            e.at("rows").get<int>() != layout.entries[i].rows ||
            e.at("cols").get<int>() != layout.entries[i].cols)
            throw ShapeMismatch("checkpoint tensor " + std::string(e.at("name")) +
                                " does not match the config layout");
        Mat t(layout.entries[i].rows, layout.entries[i].cols);
        in.read(reinterpret_cast<char*>(t.a.data()),
                static_cast<std::streamsize>(t.a.size() * sizeof(double)));
        if (!in) throw Error("truncated checkpoint blob");
        ckpt.params.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void write_loss_curve_csv(const std::filesystem::path& path,
                          std::span<const LossCurveRow> curve) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << "step,lr,loss,numerator,denominator\n";
    out.precision(17);
    for (const auto& row : curve)
        out << row.step << "," << row.lr << "," << row.loss << "," << row.numerator
            << "," << row.denominator << "\n";
}

}  // namespace icm
