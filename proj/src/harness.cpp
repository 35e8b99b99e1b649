#include "qjlab/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <sstream>
#include <stdexcept>

#include "qjlab/common.hpp"
#include "qjlab/random.hpp"

namespace qjlab {

using nlohmann::json;

std::string to_string(Statistic s) {
    switch (s) {
        case Statistic::L1: return "l1";
        case Statistic::KS: return "ks";
        case Statistic::chi2: return "chi2";
    }
    throw std::logic_error("unreachable");
}

Statistic statistic_from_string(const std::string& name) {
    if (name == "l1") return Statistic::L1;
    if (name == "ks") return Statistic::KS;
    if (name == "chi2") return Statistic::chi2;
    throw ConfigError("unknown statistic '" + name + "' (expected l1, ks, or chi2)");
}

json ComparisonReport::to_json() const {
    return json{{"statistic", qjlab::to_string(statistic)},
                {"value", value},
                {"n", n},
                {"threshold", threshold},
                {"pass", pass}};
}

json comparison_to_json(const ComparisonReport& report) { return report.to_json(); }

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string format_complex(cx z) { return format_double(z.real()) + "," + format_double(z.imag()); }

/* ---------------------------------------------------------------- config */

void AnalysisConfig::validate() const {
    if (!(threshold > 0.0)) throw ConfigError("[analysis] threshold must be positive");
    if (!(bin_width > 0.0)) throw ConfigError("[analysis] bin_width must be positive");
    if (ks_grid < 101 || ks_grid % 2 == 0)
        throw ConfigError("[analysis] ks_grid must be odd and at least 101");
}

MeterParams MeterConfig::params(cx alpha1_bar) const {
    MeterParams p;
    p.kp_over_k = kp_over_k;
    p.kp_over_gp = kp_over_gp;
    p.drive_prime = auto_drive ? cancellation_drive(alpha1_bar) : drive;
    return p;
}

DipConfig MeterConfig::dip() const {
    DipConfig d;
    d.threshold_fraction = threshold_fraction;
    d.bright_band = bright_band;
    d.bright_min_duration = bright_min_duration;
    d.max_gap = max_gap;
    return d;
}

ClassifyConfig MeterConfig::classify() const {
    ClassifyConfig c;
    c.window = classify_window;
    return c;
}

void MeterConfig::validate() const {
    params(cx{1.0, 0.0}).validate();
    if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
        throw ConfigError("[meter] threshold_fraction must lie in (0, 1)");
    if (!(bright_band > 0.0)) throw ConfigError("[meter] bright_band must be positive");
    if (!(bright_min_duration > 0.0))
        throw ConfigError("[meter] bright_min_duration must be positive");
    if (!(max_gap >= 0.0)) throw ConfigError("[meter] max_gap must be non-negative");
    if (!(classify_window > 0.0)) throw ConfigError("[meter] classify_window must be positive");
}

void TrajectorySection::validate() const {
    if (!(dt > 0.0)) throw ConfigError("[trajectory] dt must be positive");
    if (!(duration > 0.0)) throw ConfigError("[trajectory] duration must be positive");
    if (!(burn_in >= 0.0)) throw ConfigError("[trajectory] burn_in must be non-negative");
    if (sample_stride < 1) throw ConfigError("[trajectory] sample_stride must be at least 1");
    if (!(ring_window > 0.0)) throw ConfigError("[trajectory] ring_window must be positive");
    if (initial != "vacuum" && initial != "steady-sample" && initial != "bright")
        throw ConfigError("[trajectory] initial must be vacuum, steady-sample, or bright");
}

InitialSuperposition Stage2Config::superposition() const {
    InitialSuperposition init;
    init.c1 = cx{std::sqrt(weight1), 0.0};
    init.c2 = std::sqrt(1.0 - weight1) * std::exp(cx{0.0, phi0});
    init.alpha1 = alpha1;
    init.alpha2 = alpha2;
    return init;
}

CatFrame Stage2Config::frame() const { return to_cat_frame(alpha1, alpha2, phi0); }

HeterodyneConfig Stage2Config::heterodyne() const {
    HeterodyneConfig c;
    c.init = superposition();
    c.dt = dt;
    c.t_end = t_end;
    c.path_stride = path_stride;
    return c;
}

HomodyneConfig Stage2Config::homodyne() const {
    HomodyneConfig c;
    c.frame = frame();
    c.theta = theta;
    c.d_eta = d_eta;
    c.eta_max = eta_max;
    c.path_stride = path_stride;
    return c;
}

void Stage2Config::validate() const {
    if (!(weight1 >= 0.0 && weight1 <= 1.0))
        throw ConfigError("[stage2] weight1 must lie in [0, 1]");
    if (n_paths < 1) throw ConfigError("[stage2] n_paths must be at least 1");
    if (path_stride < 0) throw ConfigError("[stage2] path_stride must be non-negative");
    if (kind == ChargeKind::heterodyne) {
        heterodyne().validate();
    } else {
        homodyne().validate();
    }
}

bool OutputConfig::wants(const std::string& format) const {
    return std::find(formats.begin(), formats.end(), format) != formats.end();
}

void OutputConfig::validate() const {
    if (directory.empty()) throw ConfigError("[output] directory must not be empty");
    if (formats.empty()) throw ConfigError("[output] formats must not be empty");
    for (const auto& f : formats)
        if (f != "csv" && f != "json" && f != "ndjson")
            throw ConfigError("[output] unknown format '" + f + "' (csv, json, ndjson)");
}

void ExperimentConfig::validate() const {
    try {
        jc.validate();
        meter.validate();
        trajectory.validate();
        stage2.validate();
        fluctuation.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    analysis.validate();
    output.validate();
    if (fluctuation.mode == FluctuationMode::weight_phase &&
        stage2.kind != ChargeKind::heterodyne)
        throw ConfigError("[fluctuation] weight_phase applies to heterodyne records only");
    if (fluctuation.mode == FluctuationMode::gaussian_A &&
        stage2.kind != ChargeKind::homodyne)
        throw ConfigError("[fluctuation] gaussian_A applies to homodyne records only");
}

/* ------------------------------------------------- config serialization */

namespace {

/* A leaf value seen either as raw key=value text or as a JSON node, so the
 * two parsers share one strict dispatch per section. */
class Value {
public:
    Value(std::string text, std::string context)
        : text_(std::move(text)), context_(std::move(context)) {}
    Value(const json* node, std::string context) : node_(node), context_(std::move(context)) {}

    double as_double() const {
        if (node_) {
            if (!node_->is_number()) fail("a number");
            return node_->get<double>();
        }
        return parse_double(text_);
    }

    int as_int() const {
        const long v = as_long();
        if (v < INT_MIN || v > INT_MAX) fail("a machine integer");
        return static_cast<int>(v);
    }

    long as_long() const {
        if (node_) {
            if (!node_->is_number_integer() && !node_->is_number_unsigned())
                fail("an integer");
            return node_->get<long>();
        }
        errno = 0;
        char* end = nullptr;
        const long v = std::strtol(text_.c_str(), &end, 10);
        if (errno != 0 || end == text_.c_str() || *end != '\0') fail("an integer");
        return v;
    }

    std::uint64_t as_u64() const {
        if (node_) {
            if (!node_->is_number_unsigned() && !(node_->is_number_integer() &&
                                                  node_->get<long long>() >= 0))
                fail("an unsigned integer");
            return node_->get<std::uint64_t>();
        }
        if (!text_.empty() && text_[0] == '-') fail("an unsigned integer");
        errno = 0;
        char* end = nullptr;
        const unsigned long long v = std::strtoull(text_.c_str(), &end, 10);
        if (errno != 0 || end == text_.c_str() || *end != '\0') fail("an unsigned integer");
        return v;
    }

    bool as_bool() const {
        if (node_) {
            if (!node_->is_boolean()) fail("a boolean");
            return node_->get<bool>();
        }
        if (text_ == "true") return true;
        if (text_ == "false") return false;
        fail("true or false");
    }

    std::string as_string() const {
        if (node_) {
            if (!node_->is_string()) fail("a string");
            return node_->get<std::string>();
        }
        return text_;
    }

    cx as_complex() const {
        if (node_) {
            if (!node_->is_array() || node_->size() != 2 || !(*node_)[0].is_number() ||
                !(*node_)[1].is_number())
                fail("a [re, im] pair");
            return cx{(*node_)[0].get<double>(), (*node_)[1].get<double>()};
        }
        const auto comma = text_.find(',');
        if (comma == std::string::npos) fail("a re,im pair");
        return cx{parse_double(text_.substr(0, comma)), parse_double(text_.substr(comma + 1))};
    }

    std::vector<std::string> as_string_list() const {
        std::vector<std::string> out;
        if (node_) {
            if (!node_->is_array()) fail("an array of strings");
            for (const auto& item : *node_) {
                if (!item.is_string()) fail("an array of strings");
                out.push_back(item.get<std::string>());
            }
        } else {
            std::string token;
            std::istringstream stream(text_);
            while (std::getline(stream, token, ',')) out.push_back(trim(token));
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

private:
    [[noreturn]] void fail(const std::string& expected) const {
        throw ConfigError(context_ + " expects " + expected +
                          (node_ ? "" : " (got '" + text_ + "')"));
    }

    double parse_double(const std::string& raw) const {
        const std::string s = trim(raw);
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (errno != 0 || end == s.c_str() || *end != '\0') fail("a number");
        return v;
    }

    const json* node_ = nullptr;
    std::string text_;
    std::string context_;
};

json complex_json(cx z) { return json::array({z.real(), z.imag()}); }

void apply_jc(JCParams& p, const std::string& key, const Value& v) {
    if (key == "g_over_k") p.g_over_k = v.as_double();
    else if (key == "drive") p.drive = v.as_complex();
    else if (key == "detuning") p.detuning = v.as_double();
    else if (key == "n_max") p.hilbert.n_max = v.as_int();
    else if (key == "include_atom") p.hilbert.include_atom = v.as_bool();
    else throw ConfigError("[jc] unknown key '" + key + "'");
}

json jc_json(const JCParams& p) {
    return json{{"g_over_k", p.g_over_k},
                {"drive", complex_json(p.drive)},
                {"detuning", p.detuning},
                {"n_max", p.hilbert.n_max},
                {"include_atom", p.hilbert.include_atom}};
}

void apply_meter(MeterConfig& m, const std::string& key, const Value& v) {
    if (key == "kp_over_k") m.kp_over_k = v.as_double();
    else if (key == "kp_over_gp") m.kp_over_gp = v.as_double();
    else if (key == "auto_drive") m.auto_drive = v.as_bool();
    else if (key == "drive") m.drive = v.as_complex();
    else if (key == "threshold_fraction") m.threshold_fraction = v.as_double();
    else if (key == "bright_band") m.bright_band = v.as_double();
    else if (key == "bright_min_duration") m.bright_min_duration = v.as_double();
    else if (key == "max_gap") m.max_gap = v.as_double();
    else if (key == "classify_window") m.classify_window = v.as_double();
    else throw ConfigError("[meter] unknown key '" + key + "'");
}

json meter_json(const MeterConfig& m) {
    return json{{"kp_over_k", m.kp_over_k},
                {"kp_over_gp", m.kp_over_gp},
                {"auto_drive", m.auto_drive},
                {"drive", complex_json(m.drive)},
                {"threshold_fraction", m.threshold_fraction},
                {"bright_band", m.bright_band},
                {"bright_min_duration", m.bright_min_duration},
                {"max_gap", m.max_gap},
                {"classify_window", m.classify_window}};
}

void apply_trajectory(TrajectorySection& t, const std::string& key, const Value& v) {
    if (key == "dt") t.dt = v.as_double();
    else if (key == "duration") t.duration = v.as_double();
    else if (key == "burn_in") t.burn_in = v.as_double();
    else if (key == "sample_stride") t.sample_stride = v.as_int();
    else if (key == "initial") t.initial = v.as_string();
    else if (key == "ring_window") t.ring_window = v.as_double();
    else throw ConfigError("[trajectory] unknown key '" + key + "'");
}

json trajectory_json(const TrajectorySection& t) {
    return json{{"dt", t.dt},
                {"duration", t.duration},
                {"burn_in", t.burn_in},
                {"sample_stride", t.sample_stride},
                {"initial", t.initial},
                {"ring_window", t.ring_window}};
}

void apply_stage2(Stage2Config& s, const std::string& key, const Value& v) {
    if (key == "kind") {
        const std::string k = v.as_string();
        if (k == "heterodyne") s.kind = ChargeKind::heterodyne;
        else if (k == "homodyne") s.kind = ChargeKind::homodyne;
        else throw ConfigError("[stage2] kind must be heterodyne or homodyne");
    } else if (key == "alpha1") s.alpha1 = v.as_complex();
    else if (key == "alpha2") s.alpha2 = v.as_complex();
    else if (key == "weight1") s.weight1 = v.as_double();
    else if (key == "phi0") s.phi0 = v.as_double();
    else if (key == "theta") s.theta = v.as_double();
    else if (key == "dt") s.dt = v.as_double();
    else if (key == "t_end") s.t_end = v.as_double();
    else if (key == "d_eta") s.d_eta = v.as_double();
    else if (key == "eta_max") s.eta_max = v.as_double();
    else if (key == "n_paths") s.n_paths = v.as_long();
    else if (key == "path_stride") s.path_stride = v.as_int();
    else throw ConfigError("[stage2] unknown key '" + key + "'");
}

json stage2_json(const Stage2Config& s) {
    return json{{"kind", s.kind == ChargeKind::heterodyne ? "heterodyne" : "homodyne"},
                {"alpha1", complex_json(s.alpha1)},
                {"alpha2", complex_json(s.alpha2)},
                {"weight1", s.weight1},
                {"phi0", s.phi0},
                {"theta", s.theta},
                {"dt", s.dt},
                {"t_end", s.t_end},
                {"d_eta", s.d_eta},
                {"eta_max", s.eta_max},
                {"n_paths", s.n_paths},
                {"path_stride", s.path_stride}};
}

void apply_fluctuation(FluctuationModel& f, const std::string& key, const Value& v) {
    if (key == "mode") {
        const std::string m = v.as_string();
        if (m == "none") f.mode = FluctuationMode::none;
        else if (m == "weight_phase") f.mode = FluctuationMode::weight_phase;
        else if (m == "gaussian_A") f.mode = FluctuationMode::gaussian_A;
        else throw ConfigError("[fluctuation] mode must be none, weight_phase, or gaussian_A");
    } else if (key == "sigma_over_sqrtA") f.sigma_over_sqrtA = v.as_double();
    else if (key == "seed") f.seed = v.as_u64();
    else throw ConfigError("[fluctuation] unknown key '" + key + "'");
}

json fluctuation_json(const FluctuationModel& f) {
    const char* mode = f.mode == FluctuationMode::none ? "none"
                       : f.mode == FluctuationMode::weight_phase ? "weight_phase"
                                                                 : "gaussian_A";
    return json{{"mode", mode}, {"sigma_over_sqrtA", f.sigma_over_sqrtA}, {"seed", f.seed}};
}

void apply_analysis(AnalysisConfig& a, const std::string& key, const Value& v) {
    if (key == "statistic") a.statistic = statistic_from_string(v.as_string());
    else if (key == "threshold") a.threshold = v.as_double();
    else if (key == "bin_width") a.bin_width = v.as_double();
    else if (key == "ks_grid") a.ks_grid = v.as_int();
    else throw ConfigError("[analysis] unknown key '" + key + "'");
}

json analysis_json(const AnalysisConfig& a) {
    return json{{"statistic", to_string(a.statistic)},
                {"threshold", a.threshold},
                {"bin_width", a.bin_width},
                {"ks_grid", a.ks_grid}};
}

void apply_output(OutputConfig& o, const std::string& key, const Value& v) {
    if (key == "directory") o.directory = v.as_string();
    else if (key == "formats") o.formats = v.as_string_list();
    else throw ConfigError("[output] unknown key '" + key + "'");
}

json output_json(const OutputConfig& o) {
    return json{{"directory", o.directory}, {"formats", o.formats}};
}

void apply_key(ExperimentConfig& c, const std::string& section, const std::string& key,
               const Value& v) {
    if (section == "jc") apply_jc(c.jc, key, v);
    else if (section == "meter") apply_meter(c.meter, key, v);
    else if (section == "trajectory") apply_trajectory(c.trajectory, key, v);
    else if (section == "stage2") apply_stage2(c.stage2, key, v);
    else if (section == "fluctuation") apply_fluctuation(c.fluctuation, key, v);
    else if (section == "analysis") apply_analysis(c.analysis, key, v);
    else if (section == "seeds") {
        if (key == "base_seed") c.base_seed = v.as_u64();
        else throw ConfigError("[seeds] unknown key '" + key + "'");
    } else if (section == "output") apply_output(c.output, key, v);
    else
        throw ConfigError("unknown section [" + section +
                          "] (jc, meter, trajectory, stage2, fluctuation, analysis, "
                          "seeds, output)");
}

const char* const kSectionOrder[] = {"jc",          "meter",    "trajectory", "stage2",
                                     "fluctuation", "analysis", "seeds",      "output"};

std::string leaf_to_ini(const json& leaf) {
    if (leaf.is_boolean()) return leaf.get<bool>() ? "true" : "false";
    if (leaf.is_number_float()) return format_double(leaf.get<double>());
    if (leaf.is_number_integer() || leaf.is_number_unsigned()) return leaf.dump();
    if (leaf.is_string()) return leaf.get<std::string>();
    if (leaf.is_array()) {
        if (leaf.size() == 2 && leaf[0].is_number_float())
            return format_double(leaf[0].get<double>()) + "," +
                   format_double(leaf[1].get<double>());
        std::string joined;
        for (const auto& item : leaf) {
            if (!joined.empty()) joined += ",";
            joined += item.get<std::string>();
        }
        return joined;
    }
    throw std::logic_error("unexpected config leaf type");
}

} // namespace

json ExperimentConfig::to_json() const {
    return json{{"jc", jc_json(jc)},
                {"meter", meter_json(meter)},
                {"trajectory", trajectory_json(trajectory)},
                {"stage2", stage2_json(stage2)},
                {"fluctuation", fluctuation_json(fluctuation)},
                {"analysis", analysis_json(analysis)},
                {"seeds", json{{"base_seed", base_seed}}},
                {"output", output_json(output)}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config JSON must be an object of sections");
    ExperimentConfig c;
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object())
            throw ConfigError("config section '" + section + "' must be an object");
        for (const auto& [key, leaf] : body.items())
            apply_key(c, section, key, Value(&leaf, "[" + section + "] " + key));
    }
    return c;
}

std::string ExperimentConfig::to_ini() const {
    const json j = to_json();
    std::string out;
    for (const char* section : kSectionOrder) {
        out += "[" + std::string(section) + "]\n";
        for (const auto& [key, leaf] : j.at(section).items())
            out += key + " = " + leaf_to_ini(leaf) + "\n";
        out += "\n";
    }
    return out;
}

ExperimentConfig ExperimentConfig::from_ini(const std::string& text) {
    ExperimentConfig c;
    std::istringstream stream(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        const std::string t = Value::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section");
            section = Value::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
        const std::string key = Value::trim(t.substr(0, eq));
        const std::string value = Value::trim(t.substr(eq + 1));
        apply_key(c, section, key, Value(value, "[" + section + "] " + key));
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        return from_json(j);
    }
    return from_ini(text);
}

/* --------------------------------------------------------------- presets */

namespace {

const char* const kPresetFig2 = R"(# strong-coupling bistability operating point, long record for jump hunting
[jc]
g_over_k = 60
drive = 0,13.5
detuning = -8
n_max = 120

[meter]
kp_over_k = 100
kp_over_gp = 100

[trajectory]
dt = 0.0001
duration = 500
sample_stride = 10
initial = bright

[stage2]
kind = heterodyne
alpha1 = 1.95,-5.45
alpha2 = -1.4,0.85
weight1 = 0.5
n_paths = 100000
t_end = 10

[analysis]
statistic = l1
threshold = 0.05
bin_width = 0.5

[seeds]
base_seed = 2026

[output]
directory = runs/fig2
formats = csv,json,ndjson
)";

const char* const kPresetFig3a = R"(# heterodyne charge records conditioned on the detected jump amplitudes
[jc]
g_over_k = 60
drive = 0,13.5
detuning = -8
n_max = 120

[trajectory]
duration = 10
initial = bright

[stage2]
kind = heterodyne
alpha1 = 1.95,-5.45
alpha2 = -1.4,0.85
weight1 = 0.5
n_paths = 100000
t_end = 10

[analysis]
statistic = l1
threshold = 0.05
bin_width = 0.5

[seeds]
base_seed = 3101

[output]
directory = runs/fig3a
formats = csv,json,ndjson
)";

const char* const kPresetFig3c = R"(# even-cat homodyne interference at A = 9, LO phase along the fringes
[jc]
g_over_k = 60
drive = 0,13.5
detuning = -8
n_max = 120

[trajectory]
duration = 10
initial = bright

[stage2]
kind = homodyne
alpha1 = 9,0
alpha2 = -9,0
weight1 = 0.5
phi0 = 0
theta = 1.5707963267948966
n_paths = 100000

[analysis]
statistic = ks
threshold = 0.01
bin_width = 0.25

[seeds]
base_seed = 3303

[output]
directory = runs/fig3c
formats = csv,json,ndjson
)";

const char* const kPresetFig4 = R"(# heavier-fluctuation operating point; homodyne cat readout at A = 3.59
[jc]
g_over_k = 60
drive = 0,14.4
detuning = -7.2
n_max = 120

[meter]
kp_over_k = 100
kp_over_gp = 100

[trajectory]
dt = 0.0001
duration = 500
sample_stride = 10
initial = bright

[stage2]
kind = homodyne
alpha1 = 2.95,-5.35
alpha2 = -2.05,-0.2
weight1 = 0.5
phi0 = 0
theta = 1.5707963267948966
n_paths = 100000

[analysis]
statistic = ks
threshold = 0.01
bin_width = 0.25

[seeds]
base_seed = 4404

[output]
directory = runs/fig4
formats = csv,json,ndjson
)";

const std::map<std::string, const char*>& preset_table() {
    static const std::map<std::string, const char*> table{{"fig2", kPresetFig2},
                                                          {"fig3a", kPresetFig3a},
                                                          {"fig3c", kPresetFig3c},
                                                          {"fig4", kPresetFig4}};
    return table;
}

} // namespace

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
    const auto& table = preset_table();
    const auto it = table.find(name);
    if (it == table.end()) {
        std::string names;
        for (const auto& [n, text] : table) names += (names.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
    }
    ExperimentConfig c = from_ini(it->second);
    c.validate();
    return c;
}

std::vector<std::string> ExperimentConfig::preset_names() {
    std::vector<std::string> names;
    for (const auto& [n, text] : preset_table()) names.push_back(n);
    return names;
}

/* --------------------------------------------------------------- run dir */

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << content;
    f.close();
    if (f.fail()) throw ConfigError("write failed for " + path.string());
}

RunDir RunDir::create(const std::filesystem::path& root, const ExperimentConfig& resolved) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw ConfigError("cannot create output directory " + root.string());
    RunDir dir;
    dir.root_ = root;
    write_text_file(root / "config.ini", resolved.to_ini());
    write_text_file(root / "config.json", resolved.to_json().dump(2) + "\n");
    dir.log_.open(root / "run.log", std::ios::trunc);
    if (!dir.log_) throw ConfigError("cannot open " + (root / "run.log").string());
    dir.note("run directory created");
    return dir;
}

void RunDir::note(const std::string& message) {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    log_ << stamp << " " << message << "\n";
    log_.flush();
}

/* --------------------------------------------------------------- writers */

std::string trajectory_ndjson_line(const TrajectorySample& s) {
    std::string out = "{\"t\":" + format_double(s.t);
    out += ",\"a_re\":" + format_double(s.mean_a.real());
    out += ",\"a_im\":" + format_double(s.mean_a.imag());
    out += ",\"n\":" + format_double(s.mean_n);
    out += ",\"x0\":" + format_double(s.x0);
    out += ",\"y0\":" + format_double(s.y0);
    out += ",\"survival\":" + format_double(s.survival);
    out += "}\n";
    return out;
}

std::string meter_ndjson_line(const MeterSample& s) {
    std::string out = "{\"t\":" + format_double(s.t);
    out += ",\"ap_re\":" + format_double(s.alpha_prime.real());
    out += ",\"ap_im\":" + format_double(s.alpha_prime.imag());
    out += ",\"transmission\":" + format_double(s.transmission);
    out += ",\"flux\":" + format_double(s.flux);
    out += "}\n";
    return out;
}

json dip_event_to_json(const DipEvent& event) {
    const char* label = event.classification == DipClass::metastable_jump ? "metastable_jump"
                        : event.classification == DipClass::fluctuation   ? "fluctuation"
                                                                          : "indeterminate";
    json j{{"t_dip", event.t_dip},
           {"t_min_sample", event.t_min_sample},
           {"transmission_min", event.transmission_min},
           {"bright_start", event.bright_start},
           {"bright_end", event.bright_end},
           {"classification", label}};
    if (event.alpha1) j["alpha1"] = complex_json(*event.alpha1);
    if (event.alpha2) j["alpha2"] = complex_json(*event.alpha2);
    if (event.t_min_dx) j["t_min_dx"] = *event.t_min_dx;
    if (event.t_max_dy) j["t_max_dy"] = *event.t_max_dy;
    return j;
}

std::string finals_csv(const HeterodyneEnsemble& ensemble, const FluctuationModel& fluct,
                       std::uint64_t base_seed) {
    const bool draws = fluct.mode == FluctuationMode::weight_phase;
    std::string out = draws ? "path_index,seed,Q_re,Q_im,weight2,phase2\n"
                            : "path_index,seed,Q_re,Q_im\n";
    for (std::size_t i = 0; i < ensemble.finals.size(); ++i) {
        out += std::to_string(i) + "," + std::to_string(derive_seed(base_seed, long(i)));
        out += "," + format_double(ensemble.finals[i].real());
        out += "," + format_double(ensemble.finals[i].imag());
        if (draws) {
            out += "," + format_double(ensemble.weight_draws[i]);
            out += "," + format_double(ensemble.phase_draws[i]);
        }
        out += "\n";
    }
    return out;
}

std::string finals_csv(const HomodyneEnsemble& ensemble, const FluctuationModel& fluct,
                       std::uint64_t base_seed) {
    const bool draws = fluct.mode == FluctuationMode::gaussian_A;
    std::string out = draws ? "path_index,seed,Q_theta,A\n" : "path_index,seed,Q_theta\n";
    for (std::size_t i = 0; i < ensemble.finals.size(); ++i) {
        out += std::to_string(i) + "," + std::to_string(derive_seed(base_seed, long(i)));
        out += "," + format_double(ensemble.finals[i]);
        if (draws) out += "," + format_double(ensemble.amplitude_draws[i]);
        out += "\n";
    }
    return out;
}

std::string histogram_csv(const Histogram1D& hist, const std::function<double(double)>& target) {
    std::string out = "center,empirical,target\n";
    for (std::size_t i = 0; i < hist.centers.size(); ++i) {
        out += format_double(hist.centers[i]) + "," + format_double(hist.density[i]) + "," +
               format_double(target(hist.centers[i])) + "\n";
    }
    return out;
}

std::string histogram_csv(const Histogram2D& hist, const std::function<double(cx)>& target) {
    std::string out = "x,y,empirical,target\n";
    for (int iy = 0; iy < hist.y_bins; ++iy) {
        for (int ix = 0; ix < hist.x_bins; ++ix) {
            const cx q{hist.x_centers[std::size_t(ix)], hist.y_centers[std::size_t(iy)]};
            out += format_double(q.real()) + "," + format_double(q.imag()) + ",";
            out += format_double(hist.density[std::size_t(iy) * std::size_t(hist.x_bins) +
                                              std::size_t(ix)]);
            out += "," + format_double(target(q)) + "\n";
        }
    }
    return out;
}

std::string target_csv(const std::function<double(double)>& f, double lo, double hi, int n) {
    if (n < 2) throw ConfigError("target grid needs at least 2 points");
    std::string out = "q,density\n";
    const double h = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) {
        const double q = lo + h * i;
        out += format_double(q) + "," + format_double(f(q)) + "\n";
    }
    return out;
}

std::string target_csv(const std::function<double(cx)>& f, double x_lo, double x_hi, int nx,
                       double y_lo, double y_hi, int ny) {
    if (nx < 2 || ny < 2) throw ConfigError("target grid needs at least 2 points per axis");
    std::string out = "x,y,density\n";
    const double hx = (x_hi - x_lo) / (nx - 1);
    const double hy = (y_hi - y_lo) / (ny - 1);
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const cx q{x_lo + hx * ix, y_lo + hy * iy};
            out += format_double(q.real()) + "," + format_double(q.imag()) + "," +
                   format_double(f(q)) + "\n";
        }
    }
    return out;
}

/* ------------------------------------------------------------ comparison */

Range1D homodyne_default_range(const CatFrame& frame, double bin_width) {
    const double raw = 2.0 * frame.A + 5.0;
    const double hi = std::ceil(raw / bin_width) * bin_width;
    return Range1D{-hi, hi};
}

Range2D heterodyne_default_range(const InitialSuperposition& init, double bin_width) {
    const cx p1 = std::conj(init.alpha1), p2 = std::conj(init.alpha2);
    const double pad = 4.5;
    Range2D r;
    r.x_lo = std::floor((std::min(p1.real(), p2.real()) - pad) / bin_width) * bin_width;
    r.x_hi = std::ceil((std::max(p1.real(), p2.real()) + pad) / bin_width) * bin_width;
    r.y_lo = std::floor((std::min(p1.imag(), p2.imag()) - pad) / bin_width) * bin_width;
    r.y_hi = std::ceil((std::max(p1.imag(), p2.imag()) + pad) / bin_width) * bin_width;
    return r;
}

namespace {

struct MergedBins {
    std::vector<double> observed;
    std::vector<double> expected;
};

/* left-to-right merge until every group expects at least 5 counts; the
 * stranded tail joins the last closed group */
MergedBins merge_for_chi2(const std::vector<double>& obs, const std::vector<double>& exp) {
    MergedBins m;
    double o = 0.0, e = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        o += obs[i];
        e += exp[i];
        if (e >= 5.0) {
            m.observed.push_back(o);
            m.expected.push_back(e);
            o = e = 0.0;
        }
    }
    if (e > 0.0 || o > 0.0) {
        if (m.expected.empty()) throw ConfigError("chi2 binning degenerate: too few expected counts");
        m.observed.back() += o;
        m.expected.back() += e;
    }
    return m;
}

double chi2_per_dof(const MergedBins& m) {
    if (m.expected.size() < 2)
        throw ConfigError("chi2 binning degenerate: fewer than 2 merged bins");
    double chi2 = 0.0;
    for (std::size_t i = 0; i < m.expected.size(); ++i) {
        const double d = m.observed[i] - m.expected[i];
        chi2 += d * d / m.expected[i];
    }
    return chi2 / double(m.expected.size() - 1);
}

int bins_for(double lo, double hi, double width, const char* what) {
    const double span = hi - lo;
    if (!(span > 0.0)) throw ConfigError(std::string(what) + ": empty comparison window");
    const int bins = int(std::llround(span / width));
    if (bins < 2) throw ConfigError(std::string(what) + ": binning degenerate (fewer than 2 bins)");
    return bins;
}

/* Composite Simpson over one bin (4 subintervals). Midpoint sampling is not
 * good enough for chi2: a 1% systematic error on a bin expecting 2e4 counts
 * alone adds ~2 to chi2/dof. */
double bin_mass(const std::function<double(double)>& f, double a, double b) {
    const double h = (b - a) / 4.0;
    return h / 3.0 *
           (f(a) + 4.0 * f(a + h) + 2.0 * f(a + 2.0 * h) + 4.0 * f(a + 3.0 * h) + f(b));
}

double bin_mass(const std::function<double(cx)>& f, double ax, double bx, double ay,
                double by) {
    static constexpr double w[5] = {1.0, 4.0, 2.0, 4.0, 1.0};
    const double hx = (bx - ax) / 4.0, hy = (by - ay) / 4.0;
    double sum = 0.0;
    for (int iy = 0; iy < 5; ++iy)
        for (int ix = 0; ix < 5; ++ix)
            sum += w[ix] * w[iy] * f(cx{ax + ix * hx, ay + iy * hy});
    return sum * hx * hy / 9.0;
}

} // namespace

ComparisonReport compare_histograms(std::span<const double> finals,
                                    const std::function<double(double)>& target,
                                    const AnalysisConfig& analysis, Range1D range) {
    if (finals.size() < 100) throw ConfigError("comparison needs at least 100 finals");
    ComparisonReport report;
    report.statistic = analysis.statistic;
    report.threshold = analysis.threshold;
    report.n = long(finals.size());

    if (analysis.statistic == Statistic::KS) {
        double probe = 0.0;
        const int n_probe = 201;
        const double h = (range.hi - range.lo) / n_probe;
        for (int i = 0; i < n_probe; ++i) probe += target(range.lo + (i + 0.5) * h) * h;
        if (probe < 1e-6)
            throw ConfigError("comparison window carries no target mass");
        report.value = ks_distance(finals, target, range.lo, range.hi, analysis.ks_grid);
    } else {
        const int bins = bins_for(range.lo, range.hi, analysis.bin_width, "compare");
        const auto hist = histogram_1d(finals, range.lo, range.hi, bins);
        const double width = (range.hi - range.lo) / bins;
        std::vector<double> masses(static_cast<std::size_t>(bins));
        double inside = 0.0;
        for (int b = 0; b < bins; ++b) {
            masses[std::size_t(b)] =
                bin_mass(target, range.lo + b * width, range.lo + (b + 1) * width);
            inside += masses[std::size_t(b)];
        }
        if (inside < 1e-6) throw ConfigError("comparison window carries no target mass");
        if (analysis.statistic == Statistic::L1) {
            report.value = l1_distance(hist, target);
        } else {
            std::vector<double> obs, exp;
            for (std::size_t i = 0; i < hist.centers.size(); ++i) {
                obs.push_back(hist.density[i] * double(hist.total) * width);
                exp.push_back(masses[i] * double(finals.size()));
            }
            obs.push_back(double(hist.outside));
            exp.push_back(std::max(0.0, 1.0 - inside) * double(finals.size()));
            report.value = chi2_per_dof(merge_for_chi2(obs, exp));
        }
    }
    report.pass = report.value < report.threshold;
    return report;
}

ComparisonReport compare_histograms(std::span<const cx> finals,
                                    const std::function<double(cx)>& target,
                                    const AnalysisConfig& analysis, Range2D range) {
    if (finals.size() < 100) throw ConfigError("comparison needs at least 100 finals");
    if (analysis.statistic == Statistic::KS)
        throw ConfigError("ks needs scalar finals; use l1 or chi2 for heterodyne records");
    ComparisonReport report;
    report.statistic = analysis.statistic;
    report.threshold = analysis.threshold;
    report.n = long(finals.size());

    const int x_bins = bins_for(range.x_lo, range.x_hi, analysis.bin_width, "compare x");
    const int y_bins = bins_for(range.y_lo, range.y_hi, analysis.bin_width, "compare y");
    const auto hist =
        histogram_2d(finals, range.x_lo, range.x_hi, x_bins, range.y_lo, range.y_hi, y_bins);
    const double wx = (range.x_hi - range.x_lo) / x_bins;
    const double wy = (range.y_hi - range.y_lo) / y_bins;
    std::vector<double> masses(std::size_t(x_bins) * std::size_t(y_bins));
    double inside = 0.0;
    for (int iy = 0; iy < y_bins; ++iy) {
        for (int ix = 0; ix < x_bins; ++ix) {
            const double m =
                bin_mass(target, range.x_lo + ix * wx, range.x_lo + (ix + 1) * wx,
                         range.y_lo + iy * wy, range.y_lo + (iy + 1) * wy);
            masses[std::size_t(iy) * std::size_t(x_bins) + std::size_t(ix)] = m;
            inside += m;
        }
    }
    if (inside < 1e-6) throw ConfigError("comparison window carries no target mass");

    if (analysis.statistic == Statistic::L1) {
        report.value = l1_distance(hist, target);
    } else {
        std::vector<double> obs, exp;
        for (std::size_t k = 0; k < masses.size(); ++k) {
            obs.push_back(hist.density[k] * double(hist.total) * wx * wy);
            exp.push_back(masses[k] * double(finals.size()));
        }
        obs.push_back(double(hist.outside));
        exp.push_back(std::max(0.0, 1.0 - inside) * double(finals.size()));
        report.value = chi2_per_dof(merge_for_chi2(obs, exp));
    }
    report.pass = report.value < report.threshold;
    return report;
}

/* ------------------------------------------------------------- orchestra */

PureStateVector bright_initial_state(const JCParams& p) {
    const SemiclassicalRoots roots = solve_neoclassical(p);
    const cx alpha = roots.bright().alpha;
    const CoherentState c = coherent_state(alpha, HilbertConfig{p.hilbert.n_max, false});
    PureStateVector psi = PureStateVector::zero(p.hilbert.dim());
    for (int n = 0; n <= p.hilbert.n_max; ++n)
        psi.amplitudes[std::size_t(p.hilbert.index(0, n))] =
            c.state.amplitudes[std::size_t(n)];
    return psi;
}

TrajectoryConfig make_trajectory_config(const ExperimentConfig& config, std::uint64_t seed,
                                        bool store_snapshots) {
    TrajectoryConfig tc;
    tc.dt = config.trajectory.dt;
    tc.duration = config.trajectory.duration;
    tc.burn_in = config.trajectory.burn_in;
    tc.sample_stride = config.trajectory.sample_stride;
    tc.ring_window = config.trajectory.ring_window;
    tc.seed = seed;
    tc.store_snapshots = store_snapshots;
    if (config.trajectory.initial == "bright") {
        tc.initial_state = bright_initial_state(config.jc);
        tc.initial_preset = "vacuum";
    } else {
        tc.initial_preset = config.trajectory.initial;
    }
    return tc;
}

json cli_semiclassical(const ExperimentConfig& config) {
    const SemiclassicalRoots roots = solve_neoclassical(config.jc);
    json out;
    out["saturation_photon_number"] = saturation_photon_number(config.jc);
    out["roots"] = roots.to_json();
    if (roots.bistable()) {
        const cx a1 = roots.bright().alpha;
        const cx a2 = roots.unstable()->alpha;
        json loc;
        loc["alpha_bright"] = complex_json(a1);
        loc["alpha_unstable"] = complex_json(a2);
        loc["kdt_loc"] = localization_time(a1, a2);
        out["localization"] = loc;
        out["adiabatic"] =
            check_adiabatic_conditions(config.meter.kp_over_k, config.meter.kp_over_gp,
                                       config.jc)
                .to_json();
        out["meter_drive"] = complex_json(config.meter.params(a1).drive_prime);
        out["reference_transmission"] = std::norm(config.meter.params(a1).drive_prime);
    }
    return out;
}

namespace {

QGridSpec snapshot_grid_spec(const SemiclassicalRoots& roots) {
    std::vector<cx> anchors{cx{0.0, 0.0}};
    for (const auto& r : roots.roots) anchors.push_back(r.alpha);
    return QGridSpec::around(anchors, 3.5, 0.1);
}

std::string qgrid_csv(const QGrid& grid, double scale) {
    std::string out = "x,y,q\n";
    for (int iy = 0; iy < grid.spec.ny(); ++iy)
        for (int ix = 0; ix < grid.spec.nx(); ++ix)
            out += format_double(grid.xs[std::size_t(ix)]) + "," +
                   format_double(grid.ys[std::size_t(iy)]) + "," +
                   format_double(scale *
                                 grid.values[std::size_t(iy) * std::size_t(grid.spec.nx()) +
                                             std::size_t(ix)]) +
                   "\n";
    return out;
}

} // namespace

json cli_steady_state(const ExperimentConfig& config,
                      const std::optional<std::filesystem::path>& out_dir, bool normalized,
                      int workers) {
    const SteadyStateReport report = steady_state(config.jc);
    const auto n_op = number_operator(config.jc.hilbert);
    const auto a_op = annihilation(config.jc.hilbert);
    json out;
    out["mean_n"] = expectation(n_op, report.rho).real();
    out["mean_a"] = complex_json(expectation(a_op, report.rho));
    out["residual"] = report.residual;
    out["used_fallback"] = report.used_fallback;
    if (out_dir) {
        RunDir dir = RunDir::create(*out_dir, config);
        dir.note("steady-state solve finished");
        const DensityMatrix cavity = reduced_cavity_dm(report.rho, config.jc.hilbert);
        const QGridSpec spec = snapshot_grid_spec(solve_neoclassical(config.jc));
        const QGrid grid = q_function(cavity, spec, workers);
        const double scale = normalized ? 1.0 / pi : 1.0;
        out["q_mass"] = scale * grid.integral;
        out["q_coverage_warning"] = grid.coverage_warning;
        write_text_file(dir.file("steady.json"), out.dump(2) + "\n");
        if (config.output.wants("csv"))
            write_text_file(dir.file("qfunction.csv"), qgrid_csv(grid, scale));
        dir.note("outputs written");
    }
    return out;
}

namespace {

class NdjsonStream {
public:
    NdjsonStream() = default;
    void open(const std::filesystem::path& path) {
        stream_.open(path, std::ios::binary | std::ios::trunc);
        if (!stream_) throw ConfigError("cannot write " + path.string());
        enabled_ = true;
    }
    void line(const std::string& text) {
        if (!enabled_) return;
        stream_ << text;
        if (++pending_ >= 4096) {
            stream_.flush();
            pending_ = 0;
        }
    }
    void close() {
        if (enabled_) stream_.flush();
    }

private:
    std::ofstream stream_;
    bool enabled_ = false;
    int pending_ = 0;
};

std::string clicks_csv(const std::vector<double>& clicks) {
    std::string out = "click_index,t\n";
    for (std::size_t i = 0; i < clicks.size(); ++i)
        out += std::to_string(i) + "," + format_double(clicks[i]) + "\n";
    return out;
}

} // namespace

json cli_trajectory(const ExperimentConfig& config,
                    const std::optional<std::filesystem::path>& out_dir) {
    const std::uint64_t seed = derive_seed(config.base_seed, 0);
    const TrajectoryConfig tc = make_trajectory_config(config, seed, false);

    std::optional<RunDir> dir;
    NdjsonStream samples;
    if (out_dir) {
        dir.emplace(RunDir::create(*out_dir, config));
        if (config.output.wants("ndjson")) samples.open(dir->file("trajectory.ndjson"));
        dir->note("trajectory started");
    }
    TrajectoryRecord record;
    try {
        record = run_trajectory(config.jc, tc,
                                [&](const TrajectorySample& s, SnapshotRing&) {
                                    samples.line(trajectory_ndjson_line(s));
                                });
    } catch (...) {
        samples.close();
        if (dir) dir->note("trajectory aborted; partial samples flushed");
        throw;
    }
    samples.close();

    double n_avg = 0.0;
    for (const auto& s : record.samples) n_avg += s.mean_n;
    if (!record.samples.empty()) n_avg /= double(record.samples.size());

    json out;
    out["seed"] = seed;
    out["clicks"] = record.click_times.size();
    out["samples"] = record.samples.size();
    out["mean_n_time_average"] = n_avg;
    out["truncation_warning"] = record.truncation_warning;
    out["max_top_population"] = record.max_top_population;
    if (dir) {
        if (config.output.wants("csv"))
            write_text_file(dir->file("clicks.csv"), clicks_csv(record.click_times));
        write_text_file(dir->file("summary.json"), out.dump(2) + "\n");
        dir->note("trajectory finished");
    }
    return out;
}

json JumpRecord::to_json() const {
    return json{{"event_index", event_index},
                {"t_dip", t_dip},
                {"transmission_min", transmission_min},
                {"snapshot_time", snapshot_time},
                {"alpha1", complex_json(alpha1)},
                {"alpha2", complex_json(alpha2)},
                {"peak_ratio", peak_ratio},
                {"c1", complex_json(c1)},
                {"c2", complex_json(c2)}};
}

json Stage1Result::summary() const {
    return json{{"dips", n_dips},
                {"metastable_jumps", n_metastable},
                {"fluctuations", n_fluctuation},
                {"indeterminate", n_indeterminate},
                {"extracted_jumps", jumps.size()},
                {"truncation_warning", truncation_warning}};
}

Stage1Result cli_stage1(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const SemiclassicalRoots roots = solve_neoclassical(config.jc);
    const cx a1_bar = roots.bright().alpha;
    const MeterParams meter_params = config.meter.params(a1_bar);
    const double level = std::norm(meter_params.drive_prime);
    const bool meter_enabled = level > 0.0;

    RunDir dir = RunDir::create(out_dir, config);
    dir.note("stage 1 started");

    const std::uint64_t seed = derive_seed(config.base_seed, 0);
    const TrajectoryConfig tc = make_trajectory_config(config, seed, true);

    NdjsonStream trajectory_stream, meter_stream;
    if (config.output.wants("ndjson")) {
        trajectory_stream.open(dir.file("trajectory.ndjson"));
        if (meter_enabled) meter_stream.open(dir.file("meter.ndjson"));
    }

    MeterIntegrator integrator(meter_params);
    std::vector<MeterSample> meter_samples;
    const double pin_below = config.meter.threshold_fraction * level;

    TrajectoryRecord record;
    try {
        record = run_trajectory(
            config.jc, tc, [&](const TrajectorySample& s, SnapshotRing& ring) {
                trajectory_stream.line(trajectory_ndjson_line(s));
                if (!meter_enabled) return;
                const MeterSample ms = integrator.push(s.t, s.mean_a);
                meter_samples.push_back(ms);
                meter_stream.line(meter_ndjson_line(ms));
                if (ms.transmission < pin_below) ring.pin(s.t);
            });
    } catch (...) {
        trajectory_stream.close();
        meter_stream.close();
        dir.note("stage 1 aborted; partial streams flushed");
        throw;
    }
    trajectory_stream.close();
    meter_stream.close();
    if (config.output.wants("csv"))
        write_text_file(dir.file("clicks.csv"), clicks_csv(record.click_times));
    dir.note("trajectory finished; detecting dips");

    Stage1Result result;
    result.run_dir = out_dir;
    result.truncation_warning = record.truncation_warning;

    std::vector<DipEvent> events;
    if (meter_enabled) {
        const MeterTrace trace{meter_params, std::move(meter_samples)};
        events = detect_dip(trace, config.meter.dip());
        const ClassifyConfig classify = config.meter.classify();
        const QGridSpec spec = snapshot_grid_spec(roots);
        json dips = json::array();
        for (std::size_t k = 0; k < events.size(); ++k) {
            DipEvent& event = events[k];
            try {
                event.classification = classify_post_dip(trace, event, classify);
            } catch (const std::invalid_argument&) {
                event.classification = DipClass::indeterminate; /* window overruns the trace */
            }
            const double half = classify.window / 2.0;
            const double t0 = std::max(trace.samples.front().t, event.t_dip - half);
            const double t1 = std::min(trace.samples.back().t, event.t_dip + half);
            try {
                const QuadratureExtrema qe = quadrature_extrema(trace, t0, t1);
                if (!qe.degenerate) {
                    event.t_min_dx = qe.t_min_dx;
                    event.t_max_dy = qe.t_max_dy;
                }
            } catch (const std::invalid_argument&) {
            }

            json dip_json;
            if (event.classification == DipClass::metastable_jump) {
                ++result.n_metastable;
                const ConditionedQ snap =
                    conditioned_q_snapshot(record, config.jc.hilbert, event.t_min_sample, spec);
                const ExtractedAmplitudes ext =
                    extract_conditioned_amplitudes(snap.grid, a1_bar);
                if (ext.ok) {
                    event.alpha1 = ext.alpha1;
                    event.alpha2 = ext.alpha2;
                    JumpRecord jump;
                    jump.event_index = int(k);
                    jump.t_dip = event.t_dip;
                    jump.transmission_min = event.transmission_min;
                    jump.snapshot_time = snap.snapshot_time;
                    jump.alpha1 = *ext.alpha1;
                    jump.alpha2 = *ext.alpha2;
                    const auto peaks = find_peaks(snap.grid, 0.2);
                    if (peaks.size() >= 2 && peaks[1].height > 0.0) {
                        const bool first_is_bright =
                            std::abs(peaks[0].position - a1_bar) <
                            std::abs(peaks[1].position - a1_bar);
                        jump.peak_ratio = first_is_bright
                                              ? peaks[0].height / peaks[1].height
                                              : peaks[1].height / peaks[0].height;
                    }
                    jump.c1 = cx{1.0 / std::sqrt(2.0), 0.0};
                    jump.c2 = cx{1.0 / std::sqrt(2.0), 0.0};
                    result.jumps.push_back(jump);
                    if (config.output.wants("csv"))
                        write_text_file(dir.file("qsnap_" + std::to_string(k) + ".csv"),
                                        qgrid_csv(snap.grid, 1.0));
                } else {
                    dip_json["extraction"] = ext.diagnostic;
                }
            } else if (event.classification == DipClass::fluctuation) {
                ++result.n_fluctuation;
            } else {
                ++result.n_indeterminate;
            }
            dip_json.update(dip_event_to_json(event));
            dips.push_back(dip_json);
        }
        result.n_dips = int(events.size());
        write_text_file(dir.file("dips.json"), dips.dump(2) + "\n");
    } else {
        write_text_file(dir.file("dips.json"), "[]\n");
    }

    const char* weight_model = config.fluctuation.mode == FluctuationMode::none
                                   ? "equal"
                                   : (config.fluctuation.mode == FluctuationMode::weight_phase
                                          ? "weight_phase"
                                          : "gaussian_A");
    json jumps_json;
    jumps_json["weight_model"] = weight_model;
    jumps_json["jumps"] = json::array();
    for (const auto& jump : result.jumps) jumps_json["jumps"].push_back(jump.to_json());
    write_text_file(dir.file("jumps.json"), jumps_json.dump(2) + "\n");
    write_text_file(dir.file("summary.json"), result.summary().dump(2) + "\n");
    dir.note("stage 1 finished");
    return result;
}

namespace {

Stage2Config stage2_from_jumps(const Stage2Config& base, const std::filesystem::path& path,
                               int jump_index) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read jumps file " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (!j.contains("jumps") || !j["jumps"].is_array())
        throw ConfigError(path.string() + ": expected a stage-1 jumps file");
    const auto& jumps = j["jumps"];
    if (jump_index < 0 || std::size_t(jump_index) >= jumps.size())
        throw ConfigError("jump index " + std::to_string(jump_index) + " out of range (" +
                          std::to_string(jumps.size()) + " records)");
    const auto& rec = jumps[std::size_t(jump_index)];
    Stage2Config s2 = base;
    s2.alpha1 = cx{rec.at("alpha1")[0].get<double>(), rec.at("alpha1")[1].get<double>()};
    s2.alpha2 = cx{rec.at("alpha2")[0].get<double>(), rec.at("alpha2")[1].get<double>()};
    const cx c1{rec.at("c1")[0].get<double>(), rec.at("c1")[1].get<double>()};
    const cx c2{rec.at("c2")[0].get<double>(), rec.at("c2")[1].get<double>()};
    s2.weight1 = std::norm(c1);
    s2.phi0 = std::abs(c2) > 0.0 && std::abs(c1) > 0.0 ? std::arg(c2 / c1) : 0.0;
    return s2;
}

/* Small ensembles skip the histogram comparison; the sampled paths are the
 * deliverable instead. Per-path fluctuation draws recorded by the ensemble
 * reconstruct the exact integration each final came from. */
std::string het_paths_csv(const ExperimentConfig& config, const HeterodyneEnsemble& ens) {
    HeterodyneConfig hc = config.stage2.heterodyne();
    hc.path_stride = config.stage2.path_stride > 0 ? config.stage2.path_stride : 10;
    std::string out = "path_index,t,Q_re,Q_im\n";
    for (std::size_t i = 0; i < ens.finals.size(); ++i) {
        HeterodyneConfig pc = hc;
        if (config.fluctuation.mode == FluctuationMode::weight_phase) {
            const double w = ens.weight_draws[i];
            pc.init.c2 = cx(std::sqrt(w), 0.0);
            pc.init.c1 = cx(std::sqrt(1.0 - w), 0.0);
            pc.init.alpha2 =
                std::abs(hc.init.alpha2) * std::exp(cx(0.0, ens.phase_draws[i]));
        }
        const ChargeRecord rec = simulate_heterodyne(pc, derive_seed(ens.seed, i));
        for (std::size_t k = 0; k < rec.grid.size(); ++k) {
            out += std::to_string(i) + ',' + format_double(rec.grid[k]) + ',' +
                   format_complex(rec.path[k]) + '\n';
        }
    }
    return out;
}

std::string hom_paths_csv(const ExperimentConfig& config, const HomodyneEnsemble& ens) {
    HomodyneConfig hc = config.stage2.homodyne();
    hc.path_stride = config.stage2.path_stride > 0 ? config.stage2.path_stride : 10;
    std::string out = "path_index,eta,Q_theta\n";
    for (std::size_t i = 0; i < ens.finals.size(); ++i) {
        HomodyneConfig pc = hc;
        if (config.fluctuation.mode == FluctuationMode::gaussian_A)
            pc.frame.A = ens.amplitude_draws[i];
        const ChargeRecord rec = simulate_homodyne(pc, derive_seed(ens.seed, i));
        for (std::size_t k = 0; k < rec.grid.size(); ++k) {
            out += std::to_string(i) + ',' + format_double(rec.grid[k]) + ',' +
                   format_double(rec.path[k].real()) + '\n';
        }
    }
    return out;
}

} // namespace

Stage2Result cli_stage2(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                        int workers, const std::optional<std::filesystem::path>& jumps_file,
                        int jump_index) {
    ExperimentConfig resolved = config;
    if (jumps_file)
        resolved.stage2 = stage2_from_jumps(config.stage2, *jumps_file, jump_index);
    resolved.validate();
    const Stage2Config& s2 = resolved.stage2;

    RunDir dir = RunDir::create(out_dir, resolved);
    dir.note("stage 2 started");

    Stage2Result result;
    result.run_dir = out_dir;
    result.n_paths = s2.n_paths;
    result.compared = s2.n_paths >= 100;

    if (s2.kind == ChargeKind::heterodyne) {
        const HeterodyneConfig hc = s2.heterodyne();
        const HeterodyneEnsemble ensemble =
            run_ensemble(hc, s2.n_paths, resolved.fluctuation, resolved.base_seed, workers);
        dir.note("ensemble finished");
        const auto target = [&](cx q) { return heterodyne_target_density(q, hc.init); };
        const Range2D range = heterodyne_default_range(hc.init, resolved.analysis.bin_width);
        if (result.compared) {
            result.report =
                compare_histograms(ensemble.finals, target, resolved.analysis, range);
        }
        if (resolved.output.wants("csv")) {
            write_text_file(dir.file("finals.csv"),
                            finals_csv(ensemble, resolved.fluctuation, resolved.base_seed));
            if (result.compared) {
                const int xb = int(std::llround((range.x_hi - range.x_lo) / resolved.analysis.bin_width));
                const int yb = int(std::llround((range.y_hi - range.y_lo) / resolved.analysis.bin_width));
                const auto hist = histogram_2d(ensemble.finals, range.x_lo, range.x_hi, xb,
                                               range.y_lo, range.y_hi, yb);
                write_text_file(dir.file("histogram.csv"), histogram_csv(hist, target));
                write_text_file(dir.file("target.csv"),
                                target_csv(target, range.x_lo, range.x_hi, 201, range.y_lo,
                                           range.y_hi, 201));
            } else {
                write_text_file(dir.file("paths.csv"), het_paths_csv(resolved, ensemble));
            }
        }
    } else {
        const HomodyneConfig hc = s2.homodyne();
        const HomodyneEnsemble ensemble =
            run_ensemble(hc, s2.n_paths, resolved.fluctuation, resolved.base_seed, workers);
        dir.note("ensemble finished");
        result.clamp_total = ensemble.clamp_total;
        const auto target = [&](double q) { return homodyne_target_density(q, hc.frame, hc.theta); };
        const Range1D range = homodyne_default_range(hc.frame, resolved.analysis.bin_width);
        if (result.compared) {
            result.report =
                compare_histograms(ensemble.finals, target, resolved.analysis, range);
        }
        if (resolved.output.wants("csv")) {
            write_text_file(dir.file("finals.csv"),
                            finals_csv(ensemble, resolved.fluctuation, resolved.base_seed));
            if (result.compared) {
                const int bins = int(std::llround((range.hi - range.lo) / resolved.analysis.bin_width));
                const auto hist = histogram_1d(ensemble.finals, range.lo, range.hi, bins);
                write_text_file(dir.file("histogram.csv"), histogram_csv(hist, target));
                write_text_file(dir.file("target.csv"), target_csv(target, range.lo, range.hi, 2001));
            } else {
                write_text_file(dir.file("paths.csv"), hom_paths_csv(resolved, ensemble));
            }
        }
    }

    if (result.compared) {
        write_text_file(dir.file("report.json"), result.report.to_json().dump(2) + "\n");
    } else {
        json skipped;
        skipped["skipped"] = true;
        skipped["reason"] = "comparison needs at least 100 paths";
        skipped["n"] = s2.n_paths;
        write_text_file(dir.file("report.json"), skipped.dump(2) + "\n");
    }
    dir.note("stage 2 finished");
    return result;
}

json cli_analytic(const ExperimentConfig& config,
                  const std::optional<std::filesystem::path>& out_dir) {
    const Stage2Config& s2 = config.stage2;
    json out;
    std::string target_text;
    if (s2.kind == ChargeKind::heterodyne) {
        const InitialSuperposition init = s2.superposition();
        const auto target = [&](cx q) { return heterodyne_target_density(q, init); };
        const Range2D r = heterodyne_default_range(init, config.analysis.bin_width);
        const int n = 301;
        const double hx = (r.x_hi - r.x_lo) / n, hy = (r.y_hi - r.y_lo) / n;
        double mass = 0.0;
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix)
                mass += target(cx{r.x_lo + (ix + 0.5) * hx, r.y_lo + (iy + 0.5) * hy}) * hx * hy;
        out["kind"] = "heterodyne";
        out["peaks"] = json::array({complex_json(std::conj(init.alpha1)),
                                    complex_json(std::conj(init.alpha2))});
        out["weights"] = json::array({std::norm(init.c1), std::norm(init.c2)});
        out["window_mass"] = mass;
        out["well_separated"] = separated_well(init);
        target_text = target_csv(target, r.x_lo, r.x_hi, 201, r.y_lo, r.y_hi, 201);
    } else {
        const CatFrame frame = s2.frame();
        const auto target = [&](double q) {
            return homodyne_target_density(q, frame, s2.theta);
        };
        const Range1D r = homodyne_default_range(frame, config.analysis.bin_width);
        const int n = 200001;
        const double h = (r.hi - r.lo) / (n - 1);
        double mass = target(r.lo) + target(r.hi);
        for (int i = 1; i < n - 1; ++i) mass += (i % 2 == 1 ? 4.0 : 2.0) * target(r.lo + i * h);
        mass *= h / 3.0;
        const double A = frame.A;
        out["kind"] = "homodyne";
        out["A"] = A;
        out["phi0"] = frame.phi0;
        out["theta"] = s2.theta;
        out["window_mass"] = mass;
        out["total_mass_closed_form"] =
            (1.0 + std::cos(frame.phi0) * std::exp(-2.0 * A * A)) /
            (1.0 + std::exp(-2.0 * A * A));
        if (A > 0.0 && std::abs(std::sin(s2.theta)) > 1e-12)
            out["fringe_spacing"] = pi / (A * std::abs(std::sin(s2.theta)));
        target_text = target_csv(target, r.lo, r.hi, 2001);
    }
    if (out_dir) {
        RunDir dir = RunDir::create(*out_dir, config);
        write_text_file(dir.file("analytic.json"), out.dump(2) + "\n");
        if (config.output.wants("csv")) write_text_file(dir.file("target.csv"), target_text);
        dir.note("analytic targets written");
    }
    return out;
}

ComparisonReport cli_compare(const std::filesystem::path& finals_path,
                             const ExperimentConfig& config) {
    std::ifstream f(finals_path, std::ios::binary);
    if (!f) throw ConfigError("cannot read finals file " + finals_path.string());
    std::string header;
    if (!std::getline(f, header)) throw ConfigError(finals_path.string() + ": empty file");

    std::vector<std::string> columns;
    {
        std::istringstream h(header);
        std::string token;
        while (std::getline(h, token, ',')) columns.push_back(Value::trim(token));
    }
    const auto column = [&](const std::string& name) {
        const auto it = std::find(columns.begin(), columns.end(), name);
        return it == columns.end() ? -1 : int(it - columns.begin());
    };

    const int re_col = column("Q_re"), im_col = column("Q_im"), th_col = column("Q_theta");
    std::vector<cx> complex_finals;
    std::vector<double> scalar_finals;
    std::string line;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (Value::trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::istringstream row(line);
        std::string token;
        while (std::getline(row, token, ',')) fields.push_back(token);
        const auto field = [&](int idx) {
            if (idx < 0 || std::size_t(idx) >= fields.size())
                throw ConfigError(finals_path.string() + ":" + std::to_string(line_no) +
                                  ": short row");
            return Value(fields[std::size_t(idx)],
                         finals_path.string() + ":" + std::to_string(line_no))
                .as_double();
        };
        if (re_col >= 0 && im_col >= 0)
            complex_finals.push_back(cx{field(re_col), field(im_col)});
        else if (th_col >= 0)
            scalar_finals.push_back(field(th_col));
        else
            throw ConfigError(finals_path.string() +
                              ": header must carry Q_re,Q_im or Q_theta columns");
    }

    if (!complex_finals.empty()) {
        const InitialSuperposition init = config.stage2.superposition();
        const auto target = [&](cx q) { return heterodyne_target_density(q, init); };
        return compare_histograms(complex_finals, target, config.analysis,
                                  heterodyne_default_range(init, config.analysis.bin_width));
    }
    if (!scalar_finals.empty()) {
        const CatFrame frame = config.stage2.frame();
        const auto target = [&](double q) {
            return homodyne_target_density(q, frame, config.stage2.theta);
        };
        return compare_histograms(scalar_finals, target, config.analysis,
                                  homodyne_default_range(frame, config.analysis.bin_width));
    }
    throw ConfigError(finals_path.string() + ": no data rows");
}

} // namespace qjlab
