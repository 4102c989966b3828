#include "coml/config.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>
#include <variant>

#include "coml/errors.hpp"
#include "coml/io.hpp"

namespace coml {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

using Slot = std::variant<double*, std::size_t*, bool*,
                          std::string*, std::vector<std::size_t>*,
                          std::vector<double>*>;

struct Field {
  const char* key;
  Slot slot;
};

std::vector<Field> fields(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"threads", &c.threads},
      {"sim.dt", &c.dt},
      {"sim.control_rate", &c.control_rate},
      {"drag.beta1", &c.beta1},
      {"drag.beta2", &c.beta2},
      {"walk.dx", &c.walk.dx},
      {"walk.dy", &c.walk.dy},
      {"walk.dphi", &c.walk.dphi},
      {"wind.train.lo", &c.train_wind.lo},
      {"wind.train.hi", &c.train_wind.hi},
      {"wind.train.a", &c.train_wind.a},
      {"wind.train.b", &c.train_wind.b},
      {"wind.test.lo", &c.test_wind.lo},
      {"wind.test.hi", &c.test_wind.hi},
      {"wind.test.a", &c.test_wind.a},
      {"wind.test.b", &c.test_wind.b},
      {"collect.n_traj", &c.n_traj},
      {"collect.duration", &c.collect_duration},
      {"collect.kp", &c.collect_kp},
      {"collect.kd", &c.collect_kd},
      {"collect.max_attempts", &c.max_attempts},
      {"run.m_values", &c.m_values},
      {"run.seeds", &c.seeds},
      {"features.width", &c.width},
      {"features.normalize", &c.normalize_inputs},
      {"ensemble.epochs", &c.ensemble_epochs},
      {"ensemble.step_size", &c.ensemble_step_size},
      {"ensemble.mu", &c.ensemble_mu},
      {"ensemble.batch_fraction", &c.ensemble_batch_fraction},
      {"ensemble.train_fraction", &c.ensemble_train_fraction},
      {"ensemble.residual", &c.ensemble_residual},
      {"meta.n_refs", &c.meta_n_refs},
      {"meta.duration", &c.meta_duration},
      {"meta.alpha", &c.meta_alpha},
      {"meta.mu", &c.meta_mu},
      {"meta.steps", &c.meta_steps},
      {"meta.step_size", &c.meta_step_size},
      {"meta.train_fraction", &c.meta_train_fraction},
      {"meta.control", &c.meta_control},
      {"meta.penalty", &c.meta_penalty},
      {"acmrr.mu_ridge", &c.acmrr_mu_ridge},
      {"acmrr.mu", &c.acmrr_mu},
      {"acmrr.steps", &c.acmrr_steps},
      {"acmrr.step_size", &c.acmrr_step_size},
      {"acmrr.subset_fraction", &c.acmrr_subset_fraction},
      {"acmrr.train_fraction", &c.acmrr_train_fraction},
      {"acmrr.gravity", &c.acmrr_gravity},
      {"eval.n_test", &c.n_test},
      {"eval.duration", &c.test_duration},
      {"eval.gain_scales", &c.gain_scales},
      {"eval.sentinel", &c.sentinel},
      {"checkpoint.every", &c.checkpoint_every},
  };
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

const Field& find(const std::vector<Field>& fs, const std::string& key) {
  for (const Field& f : fs)
    if (key == f.key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

template <class T>
T parse_value(const std::string& key, const std::string& v);

template <>
double parse_value<double>(const std::string& key, const std::string& v) {
  try {
    return io::parse_double(v, 0);
  } catch (const ParseError&) {
    throw ConfigError(key + ": expected a real number, got '" + v + "'");
  }
}

template <>
std::size_t parse_value<std::size_t>(const std::string& key, const std::string& v) {
  try {
    return io::parse_size(v, 0);
  } catch (const ParseError&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

}  // namespace

RunConfig RunConfig::desk() {
  RunConfig c;
  c.n_traj = 40;
  c.m_values = {10};
  c.seeds = 3;
  c.n_test = 20;
  c.ensemble_epochs = 100;
  c.meta_steps = 150;
  c.acmrr_steps = 300;
  c.gain_scales = {1.0};
  return c;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> k;
  for (const Field& f : fields(const_cast<RunConfig&>(*this))) k.emplace_back(f.key);
  return k;
}

std::string RunConfig::get(const std::string& key) const {
  const auto fs = fields(const_cast<RunConfig&>(*this));
  const Field& f = find(fs, key);
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return io::format_double(*p);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
          std::string s;
          for (std::size_t i = 0; i < p->size(); ++i)
            s += (i ? "," : "") + std::to_string((*p)[i]);
          return s;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
          std::string s;
          for (std::size_t i = 0; i < p->size(); ++i)
            s += (i ? "," : "") + io::format_double((*p)[i]);
          return s;
        } else {
          return std::to_string(*p);
        }
      },
      f.slot);
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const auto fs = fields(*this);
  const Field& f = find(fs, key);
  const std::string v = trim(raw);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          *p = parse_value<double>(key, v);
        } else if constexpr (std::is_same_v<T, std::size_t>) {
          *p = parse_value<std::size_t>(key, v);
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true" || v == "1") {
            *p = true;
          } else if (v == "false" || v == "0") {
            *p = false;
          } else {
            throw ConfigError(key + ": expected true or false, got '" + v + "'");
          }
        } else if constexpr (std::is_same_v<T, std::string>) {
          *p = v;
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
          std::vector<std::size_t> out;
          for (const std::string& s : split_list(v))
            out.push_back(parse_value<std::size_t>(key, s));
          *p = std::move(out);
        } else {
          std::vector<double> out;
          for (const std::string& s : split_list(v))
            out.push_back(parse_value<double>(key, s));
          *p = std::move(out);
        }
      },
      f.slot);
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  apply_text(io::read_text(path), path.string());
}

std::string environment_name(const std::string& key) {
  std::string s = "COML_";
  for (char c : key)
    s.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return s;
}

std::vector<std::string> RunConfig::apply_environment() {
  std::vector<std::string> applied;
  for (const std::string& k : keys()) {
    const std::string name = environment_name(k);
    if (const char* v = std::getenv(name.c_str())) {
      try {
        set(k, v);
      } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
      }
      applied.push_back(name);
    }
  }
  return applied;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (m_values.empty()) throw ConfigError("run.m_values must not be empty");
  for (std::size_t m : m_values)
    if (m < 2 || m > n_traj) {
      throw ConfigError("run.m_values entries must lie in [2, collect.n_traj]");
    }
  if (seeds < 1) throw ConfigError("run.seeds must be >= 1");
  if (n_test < 1) throw ConfigError("eval.n_test must be >= 1");
  if (gain_scales.empty()) throw ConfigError("eval.gain_scales must not be empty");
  if (!(beta1 > 0.0) || !(beta2 > 0.0)) throw ConfigError("drag coefficients must be > 0");
  train_wind.validate();
  test_wind.validate();
  rollout::parse_control_mode(meta_control);
  ensemble_config().validate();
  meta_config().validate();
  acmrr_config().validate();
  rollout::RolloutConfig rc;
  rc.dt = dt;
  rc.control_rate = control_rate;
  rc.horizon = collect_duration;
  rc.validate();
  rc.horizon = test_duration;
  rc.validate();
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const std::string& k : keys()) s += k + " = " + get(k) + "\n";
  return s;
}

ensemble::EnsembleConfig RunConfig::ensemble_config() const {
  ensemble::EnsembleConfig e;
  e.mu = ensemble_mu;
  e.epochs = ensemble_epochs;
  e.step_size = ensemble_step_size;
  e.batch_fraction = ensemble_batch_fraction;
  e.train_fraction = ensemble_train_fraction;
  e.width = width;
  e.residual = ensemble_residual;
  e.normalize_inputs = normalize_inputs;
  return e;
}

meta::MetaConfig RunConfig::meta_config() const {
  meta::MetaConfig m;
  m.n_refs = meta_n_refs;
  m.ref_duration = meta_duration;
  m.walk = walk;
  m.rollout.dt = dt;
  m.rollout.control_rate = control_rate;
  m.rollout.horizon = meta_duration;
  m.rollout.alpha = meta_alpha;
  m.rollout.mode = rollout::parse_control_mode(meta_control);
  m.mu = meta_mu;
  m.steps = meta_steps;
  m.step_size = meta_step_size;
  m.train_fraction = meta_train_fraction;
  m.penalty = meta_penalty;
  m.width = width;
  m.normalize_inputs = normalize_inputs;
  m.threads = threads;
  return m;
}

acmrr::AcmrrConfig RunConfig::acmrr_config() const {
  acmrr::AcmrrConfig a;
  a.mu_ridge = acmrr_mu_ridge;
  a.mu = acmrr_mu;
  a.steps = acmrr_steps;
  a.step_size = acmrr_step_size;
  a.subset_fraction = acmrr_subset_fraction;
  a.train_fraction = acmrr_train_fraction;
  a.include_gravity = acmrr_gravity;
  a.width = width;
  a.normalize_inputs = normalize_inputs;
  a.threads = threads;
  return a;
}

eval::CampaignConfig RunConfig::campaign_config() const {
  eval::CampaignConfig c;
  c.n_traj = n_traj;
  c.duration = collect_duration;
  c.walk = walk;
  c.wind = train_wind;
  c.kp = collect_kp;
  c.kd = collect_kd;
  c.dt = dt;
  c.control_rate = control_rate;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.max_attempts = max_attempts;
  c.threads = threads;
  return c;
}

eval::TestSetConfig RunConfig::test_set_config() const {
  eval::TestSetConfig t;
  t.n_test = n_test;
  t.duration = test_duration;
  t.walk = walk;
  t.wind = test_wind;
  return t;
}

eval::EvalContext RunConfig::eval_context(std::size_t m, std::size_t seed) const {
  eval::EvalContext e;
  e.m = m;
  e.seed = seed;
  e.dt = dt;
  e.control_rate = control_rate;
  e.beta1 = beta1;
  e.beta2 = beta2;
  e.sentinel = sentinel;
  e.threads = threads;
  return e;
}

}  // namespace coml
