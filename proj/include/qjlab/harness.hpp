#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qjlab/charge.hpp"
#include "qjlab/jcmodel.hpp"
#include "qjlab/mcwf.hpp"
#include "qjlab/meter.hpp"

namespace qjlab {

/* Experiment orchestration: one editable configuration tree drives both the
 * trajectory/meter stage and the integrated-charge stage, every random unit
 * gets its seed from a stated mixing of (base_seed, unit index), and all data
 * outputs are byte-reproducible. Timestamps live only in a sidecar log. */

enum class Statistic { L1, KS, chi2 };

std::string to_string(Statistic s);
Statistic statistic_from_string(const std::string& name);

struct ComparisonReport {
    Statistic statistic = Statistic::L1;
    double value = 0.0;
    long n = 0;
    double threshold = 0.0;
    bool pass = false;

    nlohmann::json to_json() const;
};

/* [analysis]: how stage-2 finals are compared against the closed-form
 * terminal density. chi2 reports the per-degree-of-freedom statistic after
 * merging bins to expected counts >= 5. */
struct AnalysisConfig {
    Statistic statistic = Statistic::L1;
    double threshold = 0.05;
    double bin_width = 0.5;
    int ks_grid = 20001;

    void validate() const;
};

/* [meter]: auxiliary-cavity ratios plus the dip detector and post-dip
 * classifier knobs. With auto_drive the offset drive is resolved from the
 * bright semiclassical root at run time; an explicit drive overrides it. */
struct MeterConfig {
    double kp_over_k = 100.0;
    double kp_over_gp = 100.0;
    bool auto_drive = true;
    cx drive{};
    double threshold_fraction = 0.05;
    double bright_band = 0.5;
    double bright_min_duration = 2.0;
    double max_gap = 0.5;
    double classify_window = 2.0;

    MeterParams params(cx alpha1_bar) const;
    DipConfig dip() const;
    ClassifyConfig classify() const;
    void validate() const;
};

/* [trajectory]: the serializable slice of TrajectoryConfig. `initial` adds
 * "bright" (coherent state at the bright semiclassical root, atom in its
 * ground state) to the presets understood by the trajectory runner. */
struct TrajectorySection {
    double dt = 1e-4;
    double duration = 10.0;
    double burn_in = 0.0;
    int sample_stride = 10;
    std::string initial = "vacuum"; /* vacuum | steady-sample | bright */
    double ring_window = 2.0;

    void validate() const;
};

/* [stage2]: integrated-charge ensemble. The superposition weights are
 * |c1|^2 = weight1 with relative phase phi0 on c2; homodyne runs in the
 * cat frame derived from (alpha1, alpha2, phi0). */
struct Stage2Config {
    ChargeKind kind = ChargeKind::heterodyne;
    cx alpha1{1.95, -5.45};
    cx alpha2{-1.40, 0.85};
    double weight1 = 0.5;
    double phi0 = 0.0;
    double theta = 0.0;
    double dt = 1e-3;
    double t_end = 10.0;
    double d_eta = 1e-4;
    double eta_max = 1.0 - 1e-6;
    long n_paths = 100000;
    int path_stride = 0;

    InitialSuperposition superposition() const;
    CatFrame frame() const;
    HeterodyneConfig heterodyne() const;
    HomodyneConfig homodyne() const;
    void validate() const;
};

struct OutputConfig {
    std::string directory = "runs/out";
    std::vector<std::string> formats{"csv", "json", "ndjson"}; /* kept sorted */

    bool wants(const std::string& format) const;
    void validate() const;
};

struct ExperimentConfig {
    JCParams jc;
    MeterConfig meter;
    TrajectorySection trajectory;
    Stage2Config stage2;
    FluctuationModel fluctuation;
    AnalysisConfig analysis;
    std::uint64_t base_seed = 1;
    OutputConfig output;

    void validate() const;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::string to_ini() const;
    static ExperimentConfig from_ini(const std::string& text);

    /* Sniffs the format: a leading '{' means JSON, anything else the
     * key=value tree. Throws ConfigError on unreadable or invalid input. */
    static ExperimentConfig load(const std::filesystem::path& path);

    static ExperimentConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

/* Shortest text that parses back to the same double (%.17g). */
std::string format_double(double x);
std::string format_complex(cx z); /* "re,im" with format_double parts */

/* Run directory: created (parents included) with the exact resolved
 * configuration written first, in both tree and JSON forms. Timestamped
 * notes go to the run.log sidecar, never into data files. */
class RunDir {
public:
    static RunDir create(const std::filesystem::path& root, const ExperimentConfig& resolved);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path file(const std::string& name) const { return root_ / name; }
    void note(const std::string& message); /* timestamped, sidecar only */

private:
    RunDir() = default;
    std::filesystem::path root_;
    std::ofstream log_;
};

void write_text_file(const std::filesystem::path& path, const std::string& content);

/* One NDJSON line per sample; keys in fixed order, doubles via %.17g. */
std::string trajectory_ndjson_line(const TrajectorySample& s);
std::string meter_ndjson_line(const MeterSample& s);

nlohmann::json dip_event_to_json(const DipEvent& event);
nlohmann::json comparison_to_json(const ComparisonReport& report);

/* Ensemble finals as CSV. Columns: path_index, seed, then Q_re,Q_im
 * (heterodyne) or Q_theta (homodyne), then the fluctuation draws when the
 * corresponding model is active. */
std::string finals_csv(const HeterodyneEnsemble& ensemble, const FluctuationModel& fluct,
                       std::uint64_t base_seed);
std::string finals_csv(const HomodyneEnsemble& ensemble, const FluctuationModel& fluct,
                       std::uint64_t base_seed);

/* Histogram with the model density evaluated on the same centers:
 * "center,empirical,target" (1D) or "x,y,empirical,target" (2D). */
std::string histogram_csv(const Histogram1D& hist, const std::function<double(double)>& target);
std::string histogram_csv(const Histogram2D& hist, const std::function<double(cx)>& target);

/* Target density alone on a uniform grid: "q,density" / "x,y,density". */
std::string target_csv(const std::function<double(double)>& f, double lo, double hi, int n);
std::string target_csv(const std::function<double(cx)>& f, double x_lo, double x_hi, int nx,
                       double y_lo, double y_hi, int ny);

struct Range1D {
    double lo = 0.0, hi = 0.0;
};
struct Range2D {
    double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
};

/* Default comparison windows: the terminal peaks padded by 4.5 unit
 * deviations, snapped outward to the bin grid. */
Range1D homodyne_default_range(const CatFrame& frame, double bin_width);
Range2D heterodyne_default_range(const InitialSuperposition& init, double bin_width);

/* Empirical finals vs the closed-form terminal density. L1 bins at
 * analysis.bin_width; KS integrates the density on analysis.ks_grid points;
 * chi2 merges bins to expected counts >= 5 and reports chi2/dof. Requires
 * >= 100 finals; throws ConfigError when the window misses the target mass
 * or the binning degenerates. KS is 1D-only. */
ComparisonReport compare_histograms(std::span<const double> finals,
                                    const std::function<double(double)>& target,
                                    const AnalysisConfig& analysis, Range1D range);
ComparisonReport compare_histograms(std::span<const cx> finals,
                                    const std::function<double(cx)>& target,
                                    const AnalysisConfig& analysis, Range2D range);

/* Coherent state at the bright semiclassical root, atom in the ground
 * state; the standard launch point for ergodicity checks and jump hunts. */
PureStateVector bright_initial_state(const JCParams& p);

/* Trajectory runner config resolved from the tree; `seed` is derived by the
 * caller (derive_seed(base_seed, index)). */
TrajectoryConfig make_trajectory_config(const ExperimentConfig& config, std::uint64_t seed,
                                        bool store_snapshots);

/* Semiclassical summary: roots, localization time between the bright and
 * unstable amplitudes (when both exist), and the adiabatic ratio report. */
nlohmann::json cli_semiclassical(const ExperimentConfig& config);

/* Master-equation steady state; writes steady.json and the cavity Q
 * function CSV into out_dir when given. normalized rescales the Q surface
 * to unit mass (the native convention integrates to pi). */
nlohmann::json cli_steady_state(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir,
                                bool normalized, int workers = 0);

/* One seeded trajectory; writes samples NDJSON and the click record. */
nlohmann::json cli_trajectory(const ExperimentConfig& config,
                              const std::optional<std::filesystem::path>& out_dir);

struct JumpRecord {
    int event_index = 0;
    double t_dip = 0.0;
    double transmission_min = 0.0;
    double snapshot_time = 0.0;
    cx alpha1{};
    cx alpha2{};
    double peak_ratio = 0.0; /* bright-peak height over dim-peak height */
    cx c1{};
    cx c2{};

    nlohmann::json to_json() const;
};

struct Stage1Result {
    std::filesystem::path run_dir;
    int n_dips = 0;
    int n_metastable = 0;
    int n_fluctuation = 0;
    int n_indeterminate = 0;
    std::vector<JumpRecord> jumps;
    bool truncation_warning = false;

    nlohmann::json summary() const;
};

/* Trajectory + meter in lockstep: streams samples and the meter record,
 * pins state snapshots while the transmission sits below threshold, then
 * classifies every detected dip and reads the conditioned amplitudes off
 * the pinned Q snapshots of metastable jumps. Partial streams survive a
 * mid-run throw; jumps.json gets c1 = c2 = 1/sqrt(2) records. */
Stage1Result cli_stage1(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct Stage2Result {
    std::filesystem::path run_dir;
    ComparisonReport report;
    bool compared = true; /* false below the 100-path comparison minimum */
    long n_paths = 0;
    long clamp_total = 0; /* homodyne only */
};

/* Charge ensemble against its closed-form terminal density. The initial
 * superposition comes from the config, or from a stage-1 jumps.json when
 * given (jump_index selects the record). Emits finals, histogram, target,
 * and the comparison report. Ensembles below 100 paths skip the comparison
 * and write the sampled paths themselves instead. */
Stage2Result cli_stage2(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                        int workers = 0,
                        const std::optional<std::filesystem::path>& jumps_file = std::nullopt,
                        int jump_index = 0);

/* Closed-form stage-2 quantities without simulation: the terminal density
 * on the default window (written as CSV when out_dir is given), its total
 * mass, and the interference fringe spacing where applicable. */
nlohmann::json cli_analytic(const ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& out_dir);

/* Re-compares a finals CSV (as written by stage2) against the target
 * implied by the config. The column layout identifies the record kind. */
ComparisonReport cli_compare(const std::filesystem::path& finals_path,
                             const ExperimentConfig& config);

} // namespace qjlab
