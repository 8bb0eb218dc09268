#include "ssync/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "CLI11.hpp"

#include "ssync/errors.hpp"
#include "ssync/tensor_io.hpp"

namespace ssync {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct AblateCell {
    std::string run_id;
    RunConfig config;
};

// Table-4 style grid: component toggles, alternative thresholding methods,
// then the gamma and lambda sweeps.
std::vector<AblateCell> ablate_grid(const RunConfig& base) {
    std::vector<AblateCell> cells;
    cells.push_back({"full", base});

    RunConfig no_mask = base;
    no_mask.use_masks = false;
    cells.push_back({"no_mask", no_mask});

    RunConfig no_rfh = base;
    no_rfh.use_rfh = false;
    cells.push_back({"no_rfh", no_rfh});

    RunConfig no_pv = base;
    no_pv.use_bli = false;
    no_pv.use_dropouts = false;
    cells.push_back({"no_pv", no_pv});

    for (ThresholdMethod method :
         {ThresholdMethod::kNiblack, ThresholdMethod::kSauvola,
          ThresholdMethod::kAdaptiveMean}) {
        RunConfig cell = base;
        cell.threshold_method = method;
        cells.push_back({"thresh_" + to_string(method), cell});
    }
    for (double gamma : {0.3, 0.5, 0.7}) {
        RunConfig cell = base;
        cell.gamma = gamma;
        cells.push_back({"gamma_" + fmt_double(gamma), cell});
    }
    for (double lambda : {0.3, 0.5, 0.7}) {
        RunConfig cell = base;
        cell.lambda = lambda;
        cells.push_back({"lambda_" + fmt_double(lambda), cell});
    }
    return cells;
}

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (header) {
            table.columns = cells;
            header = false;
        } else {
            table.rows.push_back(cells);
        }
    }
    return table;
}

} // namespace

std::string metrics_csv_header() {
    return "run_id,use_masks,use_sharing,use_rfh,use_bli,use_dropouts,"
           "gamma,lambda,tau,seed,subject_consistency,layout_diversity,"
           "background_drift,mask_iou_vs_planted\n";
}

std::string metrics_csv_row(const std::string& run_id, const RunConfig& config,
                            const MetricReport& metrics) {
    std::string row = run_id;
    for (bool toggle : {config.use_masks, config.use_sharing, config.use_rfh,
                        config.use_bli, config.use_dropouts}) {
        row += toggle ? ",1" : ",0";
    }
    row += "," + fmt_double(config.gamma);
    row += "," + fmt_double(config.lambda);
    row += "," + fmt_double(config.tau);
    char seed_buf[24];
    std::snprintf(seed_buf, sizeof(seed_buf), "%" PRIu64, config.seed);
    row += std::string(",") + seed_buf;
    row += "," + fmt_double(metrics.subject_consistency);
    row += "," + fmt_double(metrics.layout_diversity);
    row += "," + fmt_double(metrics.background_drift);
    row += "," + fmt_double(metrics.mask_iou_vs_planted);
    row += "\n";
    return row;
}

std::string correspondence_csv(const CorrespondenceTable& table) {
    std::string out =
        "source_image,source_patch,target_image,target_patch,score,harmonized\n";
    for (const auto& e : table.entries) {
        out += std::to_string(e.source_image) + "," + std::to_string(e.source_patch) +
               "," + std::to_string(e.target_image) + "," +
               std::to_string(e.target_patch) + "," + fmt_double(e.score) + "," +
               (e.harmonized ? "1" : "0") + "\n";
    }
    return out;
}

void write_run_artifacts(const std::filesystem::path& out_dir,
                         const RunConfig& config, const RunResult& result) {
    std::filesystem::create_directories(out_dir / "masks");
    for (size_t t = 0; t < result.masks_per_timestep.size(); ++t) {
        for (int i = 0; i < config.num_images; ++i) {
            const std::string name =
                "t" + std::to_string(t) + "_img" + std::to_string(i) + ".pgm";
            write_file(out_dir / "masks" / name,
                       mask_to_pgm(result.masks_per_timestep[t][i], config.grid_h,
                                   config.grid_w));
        }
    }
    write_file(out_dir / "correspondence.csv",
               correspondence_csv(result.tables_per_timestep.back()));
    save_tensor(out_dir / "final_embeddings.ssyn",
                stack_matrices(result.final_embeddings));
}

int cmd_run(const std::filesystem::path& config_path,
            const std::filesystem::path& out_dir, const uint64_t* seed_override) {
    RunConfig config = load_config(config_path);
    if (seed_override) config.seed = *seed_override;
    const RunResult result = run(config);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "metrics.csv",
               metrics_csv_header() + metrics_csv_row("run", config, result.metrics));
    write_run_artifacts(out_dir, config, result);
    return 0;
}

int cmd_ablate(const std::filesystem::path& config_path,
               const std::filesystem::path& out_dir, const uint64_t* seed_override) {
    RunConfig base = load_config(config_path);
    if (seed_override) base.seed = *seed_override;

    // Pass 1 does not depend on any swept parameter, so the vanilla pass
    // and its cache are shared across all cells.
    const Engine base_engine(base);
    EmbeddingCache cache;
    base_engine.vanilla_pass(&cache);
    std::vector<SubjectMask> planted;
    for (const auto& scene : base_engine.scenes()) {
        planted.push_back(scene.planted_union);
    }

    std::string csv = metrics_csv_header();
    for (const AblateCell& cell : ablate_grid(base)) {
        const Engine engine(cell.config);
        const PassOutputs pass2 = engine.consistent_pass(cache);
        const MetricReport metrics = compute_metrics(
            pass2.final_embeddings, pass2.masks_per_timestep.back(), planted);
        csv += metrics_csv_row(cell.run_id, cell.config, metrics);
    }
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "metrics.csv", csv);
    return 0;
}

int cmd_compare(const std::filesystem::path& dir_a,
                const std::filesystem::path& dir_b) {
    const auto path_a = dir_a / "metrics.csv";
    const auto path_b = dir_b / "metrics.csv";
    for (const auto& p : {path_a, path_b}) {
        if (!std::filesystem::exists(p)) {
            throw ConfigError("missing metrics file: " + p.string());
        }
    }
    const CsvTable a = parse_csv(read_file(path_a));
    const CsvTable b = parse_csv(read_file(path_b));
    const std::vector<std::string> metric_columns = {
        "subject_consistency", "layout_diversity", "background_drift",
        "mask_iou_vs_planted"};

    auto column_mean = [](const CsvTable& table, const std::string& name) {
        double sum = 0.0;
        int count = 0;
        for (size_t c = 0; c < table.columns.size(); ++c) {
            if (table.columns[c] != name) continue;
            for (const auto& row : table.rows) {
                if (c < row.size()) {
                    sum += std::strtod(row[c].c_str(), nullptr);
                    ++count;
                }
            }
        }
        if (count == 0) throw ConfigError("metrics column not found: " + name);
        return sum / count;
    };

    for (const auto& name : metric_columns) {
        const double mean_a = column_mean(a, name);
        const double mean_b = column_mean(b, name);
        std::printf("%s: a=%.6f b=%.6f delta=%+.6f\n", name.c_str(), mean_a, mean_b,
                    mean_b - mean_a);
    }
    return 0;
}

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Deterministic subject-consistency engine: masked cross-image "
                 "attention sharing, regional feature harmonization and base "
                 "layout interpolation on a synthetic denoising pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;

    CLI::App* run_cmd = app.add_subcommand("run", "Run one config, emit artifacts");
    run_cmd->add_option("config", config_path, "JSON config path")->required();
    run_cmd->add_option("--out-dir", out_dir, "Artifact directory");
    run_cmd->add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { seed_set = true; });

    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "Run the component/threshold/sweep grid");
    ablate_cmd->add_option("config", config_path, "JSON config path")->required();
    ablate_cmd->add_option("--out-dir", out_dir, "Artifact directory");
    ablate_cmd->add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { seed_set = true; });

    std::string dir_a, dir_b;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Print per-metric deltas of two runs");
    compare_cmd->add_option("dir_a", dir_a, "First run directory")->required();
    compare_cmd->add_option("dir_b", dir_b, "Second run directory")->required();

    try {
        app.parse(argc, argv);
        const uint64_t* seed_override = seed_set ? &seed : nullptr;
        if (run_cmd->parsed()) return cmd_run(config_path, out_dir, seed_override);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path, out_dir, seed_override);
        return cmd_compare(dir_a, dir_b);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace ssync
