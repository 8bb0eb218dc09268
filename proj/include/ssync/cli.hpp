#pragma once

#include <filesystem>
#include <string>

#include "ssync/config.hpp"
#include "ssync/pipeline.hpp"

namespace ssync {

/// Entry point behind the ssync binary; split out so command behavior and
/// exit codes are unit-testable. Exit codes: 0 success, 2 invalid
/// config/usage/missing input, 3 invariant violation.
int cli_main(int argc, const char* const* argv);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& run_id, const RunConfig& config,
                            const MetricReport& metrics);
std::string correspondence_csv(const CorrespondenceTable& table);

/// Writes masks/t{t}_img{i}.pgm, correspondence.csv and
/// final_embeddings.ssyn under out_dir.
void write_run_artifacts(const std::filesystem::path& out_dir,
                         const RunConfig& config, const RunResult& result);

int cmd_run(const std::filesystem::path& config_path,
            const std::filesystem::path& out_dir, const uint64_t* seed_override);
int cmd_ablate(const std::filesystem::path& config_path,
               const std::filesystem::path& out_dir, const uint64_t* seed_override);
int cmd_compare(const std::filesystem::path& dir_a,
                const std::filesystem::path& dir_b);

} // namespace ssync
