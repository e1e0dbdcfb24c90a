#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lfd/diagnostics.hpp"
#include "lfd/evolution.hpp"
#include "lfd/initial_data.hpp"
#include "lfd/mean_field.hpp"

namespace lfd {

struct OutputSchedule {
  std::string directory = "lfd_out";
  /// Snapshot every k steps (0: only the final state).
  int snapshot_stride = 100;
  /// CSV row every k steps.
  int diagnostics_stride = 1;
};

struct DiagnosticsSettings {
  int dissipation_stride = 1;
  /// alpha of the weight e^{alpha q} in the weighted gradient norm.
  double weight_alpha = 0.5;
  ProbeConfig probe;
  double envelope_margin = 1.05;
};

struct RunConfig {
  GridParameters grid;
  double gamma = -3.0;
  SolverConfig solver;
  /// F level below which the flux falls back from the logit form to D g.
  double logit_scale = kDefaultLogitScale;
  AnalyticDatum initial;
  /// Load the datum from a snapshot instead of an analytic family.
  std::string initial_snapshot;
  bool regularize = true;
  OutputSchedule output;
  DiagnosticsSettings diagnostics;

  /// Checks every field against the owning module's preconditions.
  void validate() const;
};

/// Parses the TOML subset used for run files: [section] headers, key = value
/// with numbers, quoted strings, booleans and (nested) arrays of numbers, and
/// # comments. Unknown sections or keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// The documented defaults written back out as a config document.
std::string format_config(const RunConfig& config);

struct Snapshot {
  DensityField field;
  double epsilon = 0.0;
  int kernel_index = 0;
  double gamma = 0.0;
};

inline constexpr std::uint32_t kSnapshotVersion = 1;

/// Binary snapshot: magic, version, grid descriptors, t, eps, n, gamma,
/// FNV-1a 64 checksum of the payload, then little-endian doubles in node
/// order. Written to a temporary file and renamed into place.
void write_snapshot(const Snapshot& snap, const std::filesystem::path& path);
Snapshot read_snapshot(const std::filesystem::path& path);
/// Throws ValidationError when the snapshot grid differs from the configured one.
void check_snapshot_grid(const Snapshot& snap, const RunConfig& config);

std::uint64_t fnv1a64(const void* data, std::size_t size);

std::string csv_header(int dim);
std::string csv_row(const DiagnosticsRecord& record);
std::vector<DiagnosticsRecord> read_csv(const std::filesystem::path& path);

PhaseGrid make_grid(const RunConfig& config);
KernelTable make_kernel_table(const RunConfig& config);
/// Analytic or snapshot datum, regularized when configured.
DensityField make_initial_state(const RunConfig& config);

/// Snapshot files in a directory, ordered by step number.
std::vector<std::filesystem::path> list_snapshots(const std::filesystem::path& directory);
std::string snapshot_name(int step);

struct RunTotals {
  int steps = 0;
  int max_picard_iterations = 0;
  double max_picard_contraction = 0.0;
  double clamped_mass = 0.0;
  double transport_clamped_mass = 0.0;
  double leaked_mass = 0.0;
  double pre_clamp_min = 0.0;
  double pre_clamp_max = 0.0;
};

/// Runs (or resumes from `start`, whose step index is `first_step`) and writes
/// diagnostics.csv, snapshots and run_summary.json into the output directory.
RunTotals execute_run(const RunConfig& config, const DensityField& start, int first_step, bool append);

/// Command-line entry point; returns the process exit status.
int cli_main(int argc, char** argv);

}  // namespace lfd
