#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerkit/errors.hpp"
#include "layerkit/grid_io.hpp"
#include "layerkit/layer_engine.hpp"

namespace layerkit {

// Structured-text scenario schema. Sections: [grid], [schedule], [prompts],
// [objects] (repeatable, one object each), [panoptic] (repeatable, one mask
// each), [hyperparameters], [seed]. '#' starts a comment. Masks come either
// from LMSK files (paths relative to the config) or inline rectangles
// "mask_rect = h0 w0 h1 w1" (inclusive).

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

struct KeyValue {
    std::string section;
    int section_index = 0;  // per repeatable section instance
    std::string key;
    std::string value;
    int line = 0;
};

inline bool parse_int(const std::string& s, long long& out) {
    try {
        std::size_t used = 0;
        out = std::stoll(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
    try {
        std::size_t used = 0;
        out = std::stoull(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

struct LoadedScenario {
    EditScenario scenario;
    std::vector<std::string> warnings;
};

// Parses and fully validates a scenario. Structural and semantic problems are
// collected as field-level errors and thrown together; out-of-range
// hyperparameters only produce warnings.
inline LoadedScenario parse_scenario(const std::string& text,
                                     const std::filesystem::path& base_dir) {
    using detail::KeyValue;
    std::vector<std::string> errors;
    std::vector<KeyValue> pairs;
    {
        std::istringstream in(text);
        std::string raw;
        std::string section;
        int line_no = 0;
        std::map<std::string, int> section_counts;
        int section_index = 0;
        while (std::getline(in, raw)) {
            ++line_no;
            std::string line = raw;
            std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    errors.push_back("line " + std::to_string(line_no) +
                                     ": malformed section header");
                    continue;
                }
                section = detail::trim(line.substr(1, line.size() - 2));
                section_index = section_counts[section]++;
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
                continue;
            }
            if (section.empty()) {
                errors.push_back("line " + std::to_string(line_no) + ": key outside a section");
                continue;
            }
            KeyValue kv;
            kv.section = section;
            kv.section_index = section_index;
            kv.key = detail::trim(line.substr(0, eq));
            kv.value = detail::trim(line.substr(eq + 1));
            kv.line = line_no;
            pairs.push_back(std::move(kv));
        }
    }

    EditScenario s;
    int object_count = 0, panoptic_count = 0;
    for (const KeyValue& kv : pairs) {
        if (kv.section == "objects") object_count = std::max(object_count, kv.section_index + 1);
        if (kv.section == "panoptic")
            panoptic_count = std::max(panoptic_count, kv.section_index + 1);
    }
    s.objects.resize(static_cast<std::size_t>(object_count));
    struct PendingMask {
        std::string file;
        std::optional<std::array<int, 4>> rect;
        bool present = false;
    };
    std::vector<PendingMask> object_masks(static_cast<std::size_t>(object_count));
    std::vector<PendingMask> panoptic_masks(static_cast<std::size_t>(panoptic_count));

    auto want_int = [&](const KeyValue& kv, long long lo, long long hi, auto setter) {
        long long v;
        if (!detail::parse_int(kv.value, v) || v < lo || v > hi)
            errors.push_back(kv.section + "." + kv.key + ": bad integer '" + kv.value + "'");
        else
            setter(v);
    };
    auto want_double = [&](const KeyValue& kv, auto setter) {
        double v;
        if (!detail::parse_double(kv.value, v))
            errors.push_back(kv.section + "." + kv.key + ": bad number '" + kv.value + "'");
        else
            setter(v);
    };
    auto want_ids = [&](const KeyValue& kv, std::vector<int>& out) {
        out.clear();
        for (const std::string& tok : detail::split_ws(kv.value)) {
            long long v;
            if (!detail::parse_int(tok, v)) {
                errors.push_back(kv.section + "." + kv.key + ": bad token id '" + tok + "'");
                return;
            }
            out.push_back(static_cast<int>(v));
        }
    };
    auto want_rect = [&](const KeyValue& kv, PendingMask& pm) {
        auto toks = detail::split_ws(kv.value);
        std::array<int, 4> r{};
        bool ok = toks.size() == 4;
        for (std::size_t i = 0; ok && i < 4; ++i) {
            long long v;
            ok = detail::parse_int(toks[i], v);
            if (ok) r[i] = static_cast<int>(v);
        }
        if (!ok)
            errors.push_back(kv.section + "." + kv.key + ": expected 'h0 w0 h1 w1'");
        else {
            pm.rect = r;
            pm.present = true;
        }
    };

    for (const KeyValue& kv : pairs) {
        const std::string where = kv.section + "." + kv.key;
        if (kv.section == "grid") {
            if (kv.key == "height")
                want_int(kv, 1, 4096, [&](long long v) { s.height = static_cast<int>(v); });
            else if (kv.key == "width")
                want_int(kv, 1, 4096, [&](long long v) { s.width = static_cast<int>(v); });
            else if (kv.key == "channels")
                want_int(kv, 1, 4096, [&](long long v) { s.channels = static_cast<int>(v); });
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "schedule") {
            if (kv.key == "steps")
                want_int(kv, 1, 100000, [&](long long v) { s.steps = static_cast<int>(v); });
            else if (kv.key == "beta_start")
                want_double(kv, [&](double v) { s.beta_start = v; });
            else if (kv.key == "beta_end")
                want_double(kv, [&](double v) { s.beta_end = v; });
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "prompts") {
            if (kv.key == "source")
                want_ids(kv, s.source_prompt);
            else if (kv.key == "edit")
                want_ids(kv, s.edit_prompt);
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "objects") {
            ObjectSpec& obj = s.objects[static_cast<std::size_t>(kv.section_index)];
            PendingMask& pm = object_masks[static_cast<std::size_t>(kv.section_index)];
            if (kv.key == "source_tokens")
                want_ids(kv, obj.source_tokens);
            else if (kv.key == "edit_tokens")
                want_ids(kv, obj.edit_tokens);
            else if (kv.key == "mask_file") {
                pm.file = kv.value;
                pm.present = true;
            } else if (kv.key == "mask_rect")
                want_rect(kv, pm);
            else if (kv.key == "move") {
                auto toks = detail::split_ws(kv.value);
                long long dh, dw;
                if (toks.size() != 2 || !detail::parse_int(toks[0], dh) ||
                    !detail::parse_int(toks[1], dw))
                    errors.push_back(where + ": expected 'dh dw'");
                else
                    obj.move = std::make_pair(static_cast<int>(dh), static_cast<int>(dw));
            } else if (kv.key == "resize")
                want_double(kv, [&](double v) { obj.resize = v; });
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "panoptic") {
            PendingMask& pm = panoptic_masks[static_cast<std::size_t>(kv.section_index)];
            if (kv.key == "mask_file") {
                pm.file = kv.value;
                pm.present = true;
            } else if (kv.key == "mask_rect")
                want_rect(kv, pm);
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "hyperparameters") {
            Hyperparams& h = s.hyper;
            if (kv.key == "eta")
                want_double(kv, [&](double v) { h.eta = v; });
            else if (kv.key == "k")
                want_double(kv, [&](double v) { h.k = v; });
            else if (kv.key == "t_thres_query")
                want_int(kv, 0, 100000, [&](long long v) { h.t_thres_query = static_cast<int>(v); });
            else if (kv.key == "t_thres_key")
                want_int(kv, 0, 100000, [&](long long v) { h.t_thres_key = static_cast<int>(v); });
            else if (kv.key == "guidance")
                want_double(kv, [&](double v) { h.guidance = v; });
            else if (kv.key == "inversion_guidance")
                want_double(kv, [&](double v) { h.inversion_guidance = v; });
            else if (kv.key == "tau_step_size")
                want_double(kv, [&](double v) { h.tau_step_size = v; });
            else if (kv.key == "tau_iterations")
                want_int(kv, 0, 1000000, [&](long long v) { h.tau_iterations = static_cast<int>(v); });
            else if (kv.key == "containment_ratio")
                want_double(kv, [&](double v) { h.containment_ratio = v; });
            else if (kv.key == "output_gain")
                want_double(kv, [&](double v) { h.output_gain = v; });
            else if (kv.key == "time_gain")
                want_double(kv, [&](double v) { h.time_gain = v; });
            else
                errors.push_back(where + ": unknown key");
        } else if (kv.section == "seed") {
            if (kv.key == "seed") {
                std::uint64_t v;
                if (!detail::parse_u64(kv.value, v))
                    errors.push_back(where + ": bad seed '" + kv.value + "'");
                else
                    s.seed = v;
            } else
                errors.push_back(where + ": unknown key");
        } else {
            errors.push_back(kv.section + ": unknown section");
        }
    }

    auto resolve_mask = [&](const PendingMask& pm, const std::string& field) -> std::optional<Mask> {
        if (!pm.present) {
            errors.push_back(field + ": missing mask_file or mask_rect");
            return std::nullopt;
        }
        if (pm.rect) {
            const auto& r = *pm.rect;
            if (r[0] < 0 || r[1] < 0 || r[2] >= s.height || r[3] >= s.width || r[0] > r[2] ||
                r[1] > r[3]) {
                errors.push_back(field + ": rectangle out of bounds for grid " +
                                 std::to_string(s.height) + "x" + std::to_string(s.width));
                return std::nullopt;
            }
            return rect_mask(s.height, s.width, r[0], r[1], r[2], r[3]);
        }
        try {
            return read_mask(base_dir / pm.file);
        } catch (const Error& e) {
            errors.push_back(field + ": " + e.what());
            return std::nullopt;
        }
    };

    for (int i = 0; i < object_count; ++i) {
        std::string field = "objects[" + std::to_string(i) + "].mask";
        auto m = resolve_mask(object_masks[static_cast<std::size_t>(i)], field);
        if (m) {
            s.objects[static_cast<std::size_t>(i)].mask = std::move(*m);
            s.objects[static_cast<std::size_t>(i)].mask_path =
                object_masks[static_cast<std::size_t>(i)].file;
            s.objects[static_cast<std::size_t>(i)].mask_rect =
                object_masks[static_cast<std::size_t>(i)].rect;
        }
    }
    for (int j = 0; j < panoptic_count; ++j) {
        std::string field = "panoptic[" + std::to_string(j) + "]";
        auto m = resolve_mask(panoptic_masks[static_cast<std::size_t>(j)], field);
        if (m) s.panoptic.push_back(std::move(*m));
    }

    if (errors.empty()) {
        auto semantic = s.validate();
        errors.insert(errors.end(), semantic.begin(), semantic.end());
    }
    if (!errors.empty()) throw ValidationError(std::move(errors));

    LoadedScenario out;
    out.scenario = std::move(s);
    out.warnings = out.scenario.range_warnings();
    return out;
}

inline LoadedScenario load_scenario(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scenario: " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_scenario(buf.str(), path.parent_path());
}

// Serializes a scenario back to the structured-text schema. Masks keep their
// file/rect provenance; provenance-free masks are written as LMSK files named
// after the stem into the target directory.
inline std::string serialize_scenario(const EditScenario& s,
                                      const std::filesystem::path& target_dir,
                                      const std::string& stem) {
    std::ostringstream out;
    out.precision(17);
    auto ids = [](const std::vector<int>& v) {
        std::string r;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) r += " ";
            r += std::to_string(v[i]);
        }
        return r;
    };
    out << "[grid]\n";
    out << "height = " << s.height << "\n";
    out << "width = " << s.width << "\n";
    out << "channels = " << s.channels << "\n\n";
    out << "[schedule]\n";
    out << "steps = " << s.steps << "\n";
    out << "beta_start = " << s.beta_start << "\n";
    out << "beta_end = " << s.beta_end << "\n\n";
    out << "[prompts]\n";
    out << "source = " << ids(s.source_prompt) << "\n";
    out << "edit = " << ids(s.edit_prompt) << "\n";
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const ObjectSpec& o = s.objects[i];
        out << "\n[objects]\n";
        out << "source_tokens = " << ids(o.source_tokens) << "\n";
        out << "edit_tokens = " << ids(o.edit_tokens) << "\n";
        if (o.mask_rect) {
            const auto& r = *o.mask_rect;
            out << "mask_rect = " << r[0] << " " << r[1] << " " << r[2] << " " << r[3] << "\n";
        } else {
            std::string file = o.mask_path;
            if (file.empty()) {
                file = stem + "_obj" + std::to_string(i) + ".lmsk";
                write_mask(target_dir / file, o.mask);
            }
            out << "mask_file = " << file << "\n";
        }
        if (o.move) out << "move = " << o.move->first << " " << o.move->second << "\n";
        if (o.resize) out << "resize = " << *o.resize << "\n";
    }
    for (std::size_t j = 0; j < s.panoptic.size(); ++j) {
        out << "\n[panoptic]\n";
        std::string file = stem + "_pan" + std::to_string(j) + ".lmsk";
        write_mask(target_dir / file, s.panoptic[j]);
        out << "mask_file = " << file << "\n";
    }
    const Hyperparams& h = s.hyper;
    out << "\n[hyperparameters]\n";
    out << "eta = " << h.eta << "\n";
    out << "k = " << h.k << "\n";
    out << "t_thres_query = " << h.t_thres_query << "\n";
    out << "t_thres_key = " << h.t_thres_key << "\n";
    out << "guidance = " << h.guidance << "\n";
    out << "inversion_guidance = " << h.inversion_guidance << "\n";
    out << "tau_step_size = " << h.tau_step_size << "\n";
    out << "tau_iterations = " << h.tau_iterations << "\n";
    out << "containment_ratio = " << h.containment_ratio << "\n";
    out << "output_gain = " << h.output_gain << "\n";
    out << "time_gain = " << h.time_gain << "\n";
    out << "\n[seed]\n";
    out << "seed = " << s.seed << "\n";
    return out.str();
}

inline void save_scenario(const EditScenario& s, const std::filesystem::path& path) {
    std::string text = serialize_scenario(s, path.parent_path(), path.stem().string());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write scenario: " + path.string());
    f << text;
}

// CLI-style overrides applied on top of a loaded scenario; recorded in the
// manifest so a run is reproducible from it.
using Overrides = std::map<std::string, std::string>;

inline void apply_overrides(EditScenario& s, const Overrides& overrides,
                            std::vector<std::string>* errors = nullptr) {
    auto fail = [&](const std::string& msg) {
        if (errors)
            errors->push_back(msg);
        else
            throw ParameterError(msg);
    };
    for (const auto& [key, value] : overrides) {
        long long iv;
        double dv;
        std::uint64_t uv;
        if (key == "seed") {
            if (detail::parse_u64(value, uv))
                s.seed = uv;
            else
                fail("override seed: bad value '" + value + "'");
        } else if (key == "steps") {
            if (detail::parse_int(value, iv) && iv >= 1)
                s.steps = static_cast<int>(iv);
            else
                fail("override steps: bad value '" + value + "'");
        } else if (key == "eta") {
            if (detail::parse_double(value, dv))
                s.hyper.eta = dv;
            else
                fail("override eta: bad value '" + value + "'");
        } else if (key == "k") {
            if (detail::parse_double(value, dv))
                s.hyper.k = dv;
            else
                fail("override k: bad value '" + value + "'");
        } else if (key == "tq") {
            if (detail::parse_int(value, iv) && iv >= 0)
                s.hyper.t_thres_query = static_cast<int>(iv);
            else
                fail("override tq: bad value '" + value + "'");
        } else if (key == "tk") {
            if (detail::parse_int(value, iv) && iv >= 0)
                s.hyper.t_thres_key = static_cast<int>(iv);
            else
                fail("override tk: bad value '" + value + "'");
        } else if (key == "guidance") {
            if (detail::parse_double(value, dv))
                s.hyper.guidance = dv;
            else
                fail("override guidance: bad value '" + value + "'");
        } else if (key == "tau_step_size") {
            if (detail::parse_double(value, dv))
                s.hyper.tau_step_size = dv;
            else
                fail("override tau_step_size: bad value '" + value + "'");
        } else if (key == "tau_iterations") {
            if (detail::parse_int(value, iv) && iv >= 0)
                s.hyper.tau_iterations = static_cast<int>(iv);
            else
                fail("override tau_iterations: bad value '" + value + "'");
        } else {
            fail("unknown override '" + key + "'");
        }
    }
}

inline std::string digest_hex(std::uint64_t digest) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
    return std::string(buf);
}

inline nlohmann::json scenario_to_json(const EditScenario& s) {
    nlohmann::json j;
    j["grid"] = {{"height", s.height}, {"width", s.width}, {"channels", s.channels}};
    j["schedule"] = {{"steps", s.steps},
                     {"beta_start", s.beta_start},
                     {"beta_end", s.beta_end}};
    j["prompts"] = {{"source", s.source_prompt}, {"edit", s.edit_prompt}};
    j["objects"] = nlohmann::json::array();
    for (const ObjectSpec& o : s.objects) {
        nlohmann::json jo;
        jo["source_tokens"] = o.source_tokens;
        jo["edit_tokens"] = o.edit_tokens;
        jo["mask_digest"] = digest_hex(fnv1a64(encode_mask(o.mask)));
        if (o.move) jo["move"] = {o.move->first, o.move->second};
        if (o.resize) jo["resize"] = *o.resize;
        j["objects"].push_back(std::move(jo));
    }
    j["panoptic"] = nlohmann::json::array();
    for (const Mask& m : s.panoptic)
        j["panoptic"].push_back({{"mask_digest", digest_hex(fnv1a64(encode_mask(m)))}});
    const Hyperparams& h = s.hyper;
    j["hyperparameters"] = {{"eta", h.eta},
                            {"k", h.k},
                            {"t_thres_query", h.t_thres_query},
                            {"t_thres_key", h.t_thres_key},
                            {"t_thres_query_resolved", s.resolved_t_thres_query()},
                            {"t_thres_key_resolved", s.resolved_t_thres_key()},
                            {"guidance", h.guidance},
                            {"inversion_guidance", h.inversion_guidance},
                            {"tau_step_size", h.tau_step_size},
                            {"tau_iterations", h.tau_iterations},
                            {"containment_ratio", h.containment_ratio},
                            {"output_gain", h.output_gain},
                            {"time_gain", h.time_gain}};
    j["seed"] = s.seed;
    return j;
}

struct EmitOptions {
    bool viz = false;
};

// Writes every run artifact into out_dir and returns the manifest. The
// manifest records all output-affecting knobs, the applied overrides, stage
// timings and the emitted file list.
inline nlohmann::json emit_outputs(const std::filesystem::path& out_dir, const EditScenario& s,
                                   const PipelineOutput& output, const NoiseSchedule& sched,
                                   const EmitOptions& options, const Overrides& overrides,
                                   const std::vector<std::string>& warnings) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> files;
    auto emit_grid = [&](const std::string& name, const FeatureGrid& g) {
        write_grid(out_dir / name, g);
        files.push_back(name);
    };
    auto emit_mask = [&](const std::string& name, const Mask& m) {
        write_mask(out_dir / name, m);
        files.push_back(name);
    };
    auto two = [](int v) {
        std::string s = std::to_string(v);
        return s.size() < 2 ? "0" + s : s;
    };

    emit_grid("canvas.lgrd", output.canvas);
    for (std::size_t i = 0; i < output.layers.size(); ++i)
        emit_grid("layer_" + two(static_cast<int>(i)) + ".lgrd", output.layers[i]);
    for (std::size_t i = 0; i < output.tau.tau.size(); ++i)
        emit_mask("tau_" + two(static_cast<int>(i + 1)) + ".lmsk",
                  tau_as_mask(output.tau.tau[i]));
    if (!output.tau.tau.empty()) emit_mask("m_tau.lmsk", output.tau.overlap);
    for (std::size_t i = 0; i < output.aggregated.size(); ++i)
        emit_mask("agg_" + two(static_cast<int>(i + 1)) + ".lmsk", output.aggregated[i]);
    for (std::size_t i = 0; i < output.report.conflict.size(); ++i)
        emit_mask("conflict_" + two(static_cast<int>(i + 1)) + ".lmsk",
                  output.report.conflict[i]);
    emit_grid("alpha_bar.lgrd", sched.as_grid());

    // Conflict report as structured text.
    {
        std::ostringstream rep;
        rep.precision(17);
        rep << "objects = " << output.report.objects << "\n";
        rep << "regions = " << output.report.regions << "\n";
        rep << "eta = " << output.report.eta << "\n";
        for (int i = 0; i < output.report.objects; ++i) {
            rep << "iou[" << (i + 1) << "] =";
            for (int j = 0; j < output.report.regions; ++j)
                rep << " " << output.report.iou_at(i, j);
            rep << "\n";
        }
        for (int i = 0; i < output.report.objects; ++i)
            rep << "conflict[" << (i + 1) << "] = conflict_" << two(i + 1) << ".lmsk\n";
        std::ofstream f(out_dir / "report.txt");
        if (!f) throw IoError("cannot write report.txt");
        f << rep.str();
        files.push_back("report.txt");
    }

    if (options.viz) {
        write_pgm(out_dir / "canvas.pgm", output.canvas);
        files.push_back("canvas.pgm");
        for (std::size_t i = 0; i < output.tau.tau.size(); ++i) {
            std::string name = "tau_" + two(static_cast<int>(i + 1)) + ".pgm";
            write_pgm(out_dir / name, tau_as_mask(output.tau.tau[i]));
            files.push_back(name);
        }
        for (std::size_t i = 0; i < output.aggregated.size(); ++i) {
            std::string name = "agg_" + two(static_cast<int>(i + 1)) + ".pgm";
            write_pgm(out_dir / name, output.aggregated[i]);
            files.push_back(name);
        }
        for (std::size_t i = 0; i < output.report.conflict.size(); ++i) {
            std::string name = "conflict_" + two(static_cast<int>(i + 1)) + ".pgm";
            write_pgm(out_dir / name, output.report.conflict[i]);
            files.push_back(name);
        }
        if (!output.tau_history.empty()) {
            fs::create_directories(out_dir / "tau_history");
            for (std::size_t step = 0; step < output.tau_history.size(); ++step)
                for (std::size_t i = 0; i < output.tau_history[step].size(); ++i) {
                    std::string name = "tau_history/step_" +
                                       std::to_string(step + 1) + "_tau_" +
                                       two(static_cast<int>(i + 1)) + ".lmsk";
                    write_mask(out_dir / name, tau_as_mask(output.tau_history[step][i]));
                    files.push_back(name);
                }
        }
    }

    nlohmann::json manifest;
    manifest["scenario"] = scenario_to_json(s);
    manifest["overrides"] = overrides;
    manifest["warnings"] = warnings;
    manifest["timings_ms"] = {{"invert", output.timings.invert_ms},
                              {"decompose", output.timings.decompose_ms},
                              {"edit", output.timings.edit_ms}};
    manifest["files"] = files;
    if (!output.tau_stats.empty()) {
        manifest["tau"] = {{"final_loss", output.tau_stats.back().final_loss},
                           {"diverged_steps", [&] {
                                int diverged = 0;
                                for (const auto& st : output.tau_stats)
                                    if (st.diverged) ++diverged;
                                return diverged;
                            }()}};
    }
    {
        std::ofstream f(out_dir / "manifest.json");
        if (!f) throw IoError("cannot write manifest.json");
        f << manifest.dump(2) << "\n";
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Golden-file regression tooling.

struct GoldenEntry {
    std::string file;
    std::string digest;
    std::string tol_class;  // "bit-exact" | "1e-9" | "1e-3"
};

struct GoldenCase {
    std::string name;
    std::string config;  // config file name inside the case directory
    Overrides overrides;
    std::vector<GoldenEntry> entries;
};

inline std::string default_tolerance_class(const std::string& file) {
    auto starts = [&](const char* p) { return file.rfind(p, 0) == 0; };
    if (file == "alpha_bar.lgrd") return "bit-exact";
    if (starts("agg_") || starts("conflict_")) return "1e-9";
    return "1e-3";
}

inline PipelineOutput run_scenario(const EditScenario& s, int threads = -1) {
    LayerEngine engine(s, EngineOptions{threads});
    return engine.run();
}

// Runs the case's scenario and records per-file digests and tolerance
// classes. The scenario (with its mask dependencies) is re-serialized into
// the case directory so every digest is regenerable from it.
inline GoldenCase capture_golden(const std::filesystem::path& golden_dir, const std::string& name,
                                 const EditScenario& scenario, const Overrides& overrides = {},
                                 std::string (*classify)(const std::string&) =
                                     &default_tolerance_class) {
    namespace fs = std::filesystem;
    fs::path case_dir = golden_dir / name;
    fs::create_directories(case_dir);
    GoldenCase gc;
    gc.name = name;
    gc.config = "scenario.cfg";
    gc.overrides = overrides;
    save_scenario(scenario, case_dir / gc.config);

    EditScenario effective = scenario;
    apply_overrides(effective, overrides);
    PipelineOutput output = run_scenario(effective);
    NoiseSchedule sched = NoiseSchedule::scaled_linear(effective.steps, effective.beta_start,
                                                       effective.beta_end,
                                                       std::max(1000, effective.steps));
    fs::path ref_dir = case_dir / "ref";
    nlohmann::json manifest = emit_outputs(ref_dir, effective, output, sched, EmitOptions{},
                                           overrides, {});
    for (const auto& f : manifest["files"]) {
        std::string file = f.get<std::string>();
        if (file.size() < 5) continue;
        std::string ext = file.substr(file.size() - 5);
        if (ext != ".lgrd" && ext != ".lmsk") continue;
        GoldenEntry entry;
        entry.file = file;
        entry.digest = digest_hex(file_digest(ref_dir / file));
        entry.tol_class = classify(file);
        gc.entries.push_back(std::move(entry));
    }

    nlohmann::json j;
    j["name"] = gc.name;
    j["config"] = gc.config;
    j["overrides"] = gc.overrides;
    j["entries"] = nlohmann::json::array();
    for (const GoldenEntry& e : gc.entries)
        j["entries"].push_back({{"file", e.file}, {"digest", e.digest}, {"class", e.tol_class}});
    std::ofstream f(case_dir / "case.json");
    if (!f) throw IoError("cannot write case.json");
    f << j.dump(2) << "\n";
    return gc;
}

struct VerifyRow {
    std::string case_name;
    std::string file;
    std::string tol_class;
    bool pass = false;
    double max_diff = 0.0;
    std::string note;
};

struct VerifyReport {
    std::vector<VerifyRow> rows;
    bool all_pass = true;
};

inline double max_abs_diff_bytes(const std::string& a_bytes, const std::string& b_bytes) {
    if (a_bytes.size() >= 4 && a_bytes.compare(0, 4, "LMSK") == 0) {
        Mask a = decode_mask(a_bytes), b = decode_mask(b_bytes);
        require(a.same_shape(b), "golden compare: mask shape mismatch");
        double d = 0.0;
        for (std::size_t i = 0; i < a.values.size(); ++i)
            d = std::max(d, std::abs(a.values[i] - b.values[i]));
        return d;
    }
    FeatureGrid a = decode_grid(a_bytes), b = decode_grid(b_bytes);
    require(a.same_shape(b), "golden compare: grid shape mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        d = std::max(d, std::abs(a.values[i] - b.values[i]));
    return d;
}

// Re-runs every captured case and compares each emitted file against its
// recorded digest (bit-exact class) or reference values (tolerance classes).
inline VerifyReport verify_goldens(const std::filesystem::path& golden_dir,
                                   const std::filesystem::path& work_dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(golden_dir)) throw IoError("golden directory does not exist");
    VerifyReport report;
    std::vector<fs::path> case_dirs;
    for (const auto& entry : fs::directory_iterator(golden_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "case.json"))
            case_dirs.push_back(entry.path());
    std::sort(case_dirs.begin(), case_dirs.end());
    for (const fs::path& case_dir : case_dirs) {
        nlohmann::json j;
        {
            std::ifstream f(case_dir / "case.json");
            if (!f) throw IoError("cannot read case.json in " + case_dir.string());
            f >> j;
        }
        std::string name = j["name"].get<std::string>();
        Overrides overrides;
        if (j.contains("overrides"))
            for (auto it = j["overrides"].begin(); it != j["overrides"].end(); ++it)
                overrides[it.key()] = it.value().get<std::string>();
        LoadedScenario loaded = load_scenario(case_dir / j["config"].get<std::string>());
        EditScenario effective = loaded.scenario;
        apply_overrides(effective, overrides);
        PipelineOutput output = run_scenario(effective);
        NoiseSchedule sched = NoiseSchedule::scaled_linear(
            effective.steps, effective.beta_start, effective.beta_end,
            std::max(1000, effective.steps));
        fs::path out_dir = work_dir / name;
        emit_outputs(out_dir, effective, output, sched, EmitOptions{}, overrides,
                     loaded.warnings);
        for (const auto& je : j["entries"]) {
            VerifyRow row;
            row.case_name = name;
            row.file = je["file"].get<std::string>();
            row.tol_class = je["class"].get<std::string>();
            std::string expected_digest = je["digest"].get<std::string>();
            fs::path fresh = out_dir / row.file;
            fs::path ref = case_dir / "ref" / row.file;
            if (!fs::exists(fresh) || !fs::exists(ref)) {
                row.pass = false;
                row.note = "missing file";
            } else {
                std::string fresh_bytes = detail::read_file(fresh);
                std::string fresh_digest = digest_hex(fnv1a64(fresh_bytes));
                if (row.tol_class == "bit-exact") {
                    row.pass = fresh_digest == expected_digest;
                    if (!row.pass) row.note = "digest mismatch";
                } else {
                    double tol = row.tol_class == "1e-9" ? 1e-9 : 1e-3;
                    if (fresh_digest == expected_digest) {
                        row.pass = true;
                    } else {
                        row.max_diff = max_abs_diff_bytes(detail::read_file(ref), fresh_bytes);
                        row.pass = row.max_diff <= tol;
                        if (!row.pass) row.note = "tolerance exceeded";
                    }
                }
            }
            report.all_pass = report.all_pass && row.pass;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace layerkit
