// Command-line front end: scenario validation, pipeline runs with artifact
// emission, and golden-file capture/verification.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "layerkit/layerkit.hpp"

namespace fs = std::filesystem;
using layerkit::EditScenario;
using layerkit::Overrides;

namespace {

struct OverrideFlags {
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::optional<double> eta;
    std::optional<double> k;
    std::optional<int> tq;
    std::optional<int> tk;

    Overrides to_map() const {
        Overrides o;
        if (seed) o["seed"] = std::to_string(*seed);
        if (steps) o["steps"] = std::to_string(*steps);
        if (eta) o["eta"] = std::to_string(*eta);
        if (k) o["k"] = std::to_string(*k);
        if (tq) o["tq"] = std::to_string(*tq);
        if (tk) o["tk"] = std::to_string(*tk);
        return o;
    }
};

void add_override_flags(CLI::App* cmd, OverrideFlags& flags) {
    cmd->add_option("--seed", flags.seed, "Override the master seed");
    cmd->add_option("--steps", flags.steps, "Override the sampler step count");
    cmd->add_option("--eta", flags.eta, "Override the IoU threshold");
    cmd->add_option("--k", flags.k, "Override the removal-rate steepness");
    cmd->add_option("--tq", flags.tq, "Override the query threshold step");
    cmd->add_option("--tk", flags.tk, "Override the key threshold step");
}

int fail(const std::string& stage, const std::string& message,
         const std::vector<std::string>& fields = {}, int code = 1) {
    nlohmann::json j;
    j["error"] = {{"stage", stage}, {"message", message}, {"fields", fields}};
    std::cerr << j.dump(2) << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layerkit: multi-layer disentangled editing testbed"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", goldens_dir, case_name = "case";
    bool viz = false;
    int threads = -1;
    OverrideFlags flags;

    CLI::App* run_cmd = app.add_subcommand("run", "Run a scenario and emit artifacts");
    run_cmd->add_option("--config", config_path, "Scenario config file")->required();
    run_cmd->add_option("--out", out_dir, "Output directory");
    run_cmd->add_flag("--viz", viz, "Also emit PGM visualizations and tau history");
    run_cmd->add_option("--threads", threads, "Worker threads (-1 = hardware)");
    add_override_flags(run_cmd, flags);

    CLI::App* validate_cmd = app.add_subcommand("validate", "Validate a scenario config");
    validate_cmd->add_option("--config", config_path, "Scenario config file")->required();

    CLI::App* capture_cmd =
        app.add_subcommand("capture", "Capture a golden case from a scenario");
    capture_cmd->add_option("--config", config_path, "Scenario config file")->required();
    capture_cmd->add_option("--goldens", goldens_dir, "Golden directory")->required();
    capture_cmd->add_option("--name", case_name, "Golden case name");
    add_override_flags(capture_cmd, flags);

    CLI::App* verify_cmd = app.add_subcommand("verify", "Re-run and compare golden cases");
    verify_cmd->add_option("--goldens", goldens_dir, "Golden directory")->required();
    verify_cmd->add_option("--out", out_dir, "Work directory for fresh outputs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(validate_cmd)) {
            auto loaded = layerkit::load_scenario(config_path);
            for (const auto& w : loaded.warnings) std::cout << "warning: " << w << "\n";
            std::cout << "ok: " << loaded.scenario.object_count() << " object(s), "
                      << loaded.scenario.panoptic.size() << " panoptic region(s), "
                      << loaded.scenario.steps << " steps\n";
            return 0;
        }

        if (app.got_subcommand(run_cmd)) {
            auto loaded = layerkit::load_scenario(config_path);
            Overrides overrides = flags.to_map();
            EditScenario effective = loaded.scenario;
            layerkit::apply_overrides(effective, overrides);
            for (const auto& w : effective.range_warnings())
                std::cout << "warning: " << w << "\n";
            layerkit::EngineOptions options;
            options.threads = threads;
            options.record_tau_history = viz;
            layerkit::LayerEngine engine(effective, options);
            layerkit::PipelineOutput output = engine.run();
            layerkit::EmitOptions emit;
            emit.viz = viz;
            nlohmann::json manifest =
                layerkit::emit_outputs(out_dir, effective, output, engine.schedule(), emit,
                                       overrides, effective.range_warnings());
            std::cout << "wrote " << manifest["files"].size() << " file(s) to " << out_dir
                      << "\n";
            return 0;
        }

        if (app.got_subcommand(capture_cmd)) {
            auto loaded = layerkit::load_scenario(config_path);
            layerkit::GoldenCase gc = layerkit::capture_golden(goldens_dir, case_name,
                                                               loaded.scenario, flags.to_map());
            std::cout << "captured " << gc.entries.size() << " file(s) under " << goldens_dir
                      << "/" << gc.name << "\n";
            return 0;
        }

        if (app.got_subcommand(verify_cmd)) {
            fs::path work = fs::path(out_dir) / "golden_verify";
            layerkit::VerifyReport report = layerkit::verify_goldens(goldens_dir, work);
            for (const auto& row : report.rows)
                std::printf("%-4s %s/%s [%s]%s%s\n", row.pass ? "PASS" : "FAIL",
                            row.case_name.c_str(), row.file.c_str(), row.tol_class.c_str(),
                            row.note.empty() ? "" : " ", row.note.c_str());
            std::printf("%s: %zu file(s) checked\n", report.all_pass ? "PASS" : "FAIL",
                        report.rows.size());
            return report.all_pass ? 0 : 1;
        }
    } catch (const layerkit::ValidationError& e) {
        return fail("validate", "scenario validation failed", e.field_errors, 2);
    } catch (const layerkit::Error& e) {
        return fail("run", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
