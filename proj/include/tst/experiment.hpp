// Copyright 2026 The temporal-state-tomography Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Experiment configuration, process construction and sampling sweeps.

#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tst/tomography.hpp"

namespace tst {

// ---------------------------------------------------------------------------
// Configuration

struct StateSpec {
  std::string kind = "maximally_mixed";  // pure | maximally_mixed | file
  std::size_t d = 2;
  std::vector<double> re, im;            // pure state amplitudes (normalized on use)
  std::string path;
  bool operator==(const StateSpec&) const = default;
};

struct ChannelSpec {
  std::string kind = "identity";  // identity | depolarizing | amplitude_damping | bit_flip | file
  double p = 0;
  double gamma = 0;
  std::string path;
  bool operator==(const ChannelSpec&) const = default;
};

struct FrameSpec {
  std::string kind = "ic";  // ic | projective
  std::string basis = "z";
  bool operator==(const FrameSpec&) const = default;
};

struct SweepSpec {
  std::vector<std::uint64_t> n_values{256, 1024, 4096, 16384};
  std::size_t trials = 20;
  double delta = 0.1;              // failure probability for epsilon_target
  bool fit = true;                 // also report error_after_fit
  bool record_wall_time = false;   // wall_ms stays 0 unless set
  bool operator==(const SweepSpec&) const = default;
};

struct ExperimentConfig {
  StateSpec initial_state;
  std::vector<ChannelSpec> channels{ChannelSpec{}};
  std::string variant = "right-KD";
  std::vector<FrameSpec> frames;  // per time; empty means IC at every time
  std::string schedule = "snapshot";  // snapshot | projective
  SweepSpec sweep;
  std::uint64_t seed = 20260101;
  std::size_t threads = 1;
  std::uint64_t shots = 100000;
  std::size_t sampling_cap = 1000000;
  Tolerances tolerances;
  FitOptions fit;
  std::string output_dir = "out";
  std::filesystem::path base_dir;  // for relative file paths; not serialized

  std::size_t times() const { return channels.size() + 1; }
  bool operator==(const ExperimentConfig&) const = default;
};

/// Validation failure at a JSON pointer inside the configuration.
class ConfigError : public Error {
 public:
  ConfigError(std::string pointer, const std::string& what)
      : Error(ErrorCode::invalid_argument, (pointer.empty() ? std::string("/") : pointer) + ": " + what),
        pointer_(std::move(pointer)), detail_(what) {}
  /// Same failure prefixed with "source:line: ".
  ConfigError located(const std::string& where) const { return ConfigError(pointer_, detail_, where); }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  ConfigError(std::string pointer, const std::string& what, const std::string& where)
      : Error(ErrorCode::invalid_argument, where + ": " + (pointer.empty() ? std::string("/") : pointer) + ": " + what),
        pointer_(std::move(pointer)), detail_(what) {}

  std::string pointer_;
  std::string detail_;
};

namespace detail {

inline nlohmann::json tolerances_json(const Tolerances& t) {
  return {{"psd", t.psd}, {"recon", t.recon}, {"pd", t.pd}, {"rank", t.rank}, {"pinv", t.pinv}};
}

inline nlohmann::json fit_json(const FitOptions& f) {
  return {{"max_iterations", f.max_iterations},
          {"inner_iterations", f.inner_iterations},
          {"projection_iterations", f.projection_iterations},
          {"fit_tol", f.fit_tol},
          {"patience", f.patience}};
}

/// Typed field access that reports the JSON pointer of a bad value.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string at) : j_(j), at_(std::move(at)) {
    if (!j_.is_object()) throw ConfigError(at_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(ptr(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(ptr(key), "expected an integer");
        if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
          throw ConfigError(ptr(key), "expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(ptr(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(ptr(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr(key), e.what());
    }
  }

  void reject_unknown(std::initializer_list<const char*> known) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw ConfigError(ptr(it.key()), "unknown key");
    }
  }

  std::string ptr(const std::string& key) const { return at_ + "/" + key; }
  const nlohmann::json& json() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::string at_;
};

inline std::string unit_interval_check(double v) { return (v >= 0.0 && v <= 1.0) ? "" : "must lie in [0, 1]"; }

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json state{{"kind", c.initial_state.kind}};
  if (c.initial_state.kind == "pure") {
    state["re"] = c.initial_state.re;
    state["im"] = c.initial_state.im;
  } else if (c.initial_state.kind == "maximally_mixed") {
    state["d"] = c.initial_state.d;
  } else {
    state["path"] = c.initial_state.path;
  }
  nlohmann::json chans = nlohmann::json::array();
  for (const auto& ch : c.channels) {
    nlohmann::json j{{"kind", ch.kind}};
    if (ch.kind == "depolarizing" || ch.kind == "bit_flip") j["p"] = ch.p;
    if (ch.kind == "amplitude_damping") j["gamma"] = ch.gamma;
    if (ch.kind == "file") j["path"] = ch.path;
    chans.push_back(j);
  }
  nlohmann::json frames = nlohmann::json::array();
  const std::vector<FrameSpec> fs = c.frames.empty() ? std::vector<FrameSpec>(c.times()) : c.frames;
  for (const auto& f : fs) {
    nlohmann::json j{{"kind", f.kind}};
    if (f.kind == "projective") j["basis"] = f.basis;
    frames.push_back(j);
  }
  return {{"process", {{"initial_state", state}, {"channels", chans}}},
          {"variant", c.variant},
          {"frames", frames},
          {"schedule", c.schedule},
          {"sweep",
           {{"n_values", c.sweep.n_values},
            {"trials", c.sweep.trials},
            {"delta", c.sweep.delta},
            {"fit", c.sweep.fit},
            {"record_wall_time", c.sweep.record_wall_time}}},
          {"seed", c.seed},
          {"threads", c.threads},
          {"shots", c.shots},
          {"sampling_cap", c.sampling_cap},
          {"tolerances", detail::tolerances_json(c.tolerances)},
          {"fit", detail::fit_json(c.fit)},
          {"output_dir", c.output_dir}};
}

/// Checks ranges and cross-field consistency; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  const auto& s = c.initial_state;
  if (s.kind == "pure") {
    if (s.re.empty()) throw ConfigError("/process/initial_state/re", "pure state needs amplitudes");
    if (!s.im.empty() && s.im.size() != s.re.size()) {
      throw ConfigError("/process/initial_state/im", "length differs from re");
    }
    double norm = 0;
    for (std::size_t i = 0; i < s.re.size(); ++i) norm += s.re[i] * s.re[i] + (s.im.empty() ? 0.0 : s.im[i] * s.im[i]);
    if (!(norm > 0) || !std::isfinite(norm)) throw ConfigError("/process/initial_state/re", "amplitudes are zero or not finite");
  } else if (s.kind == "maximally_mixed") {
    if (s.d < 1) throw ConfigError("/process/initial_state/d", "dimension must be >= 1");
  } else if (s.kind == "file") {
    if (s.path.empty()) throw ConfigError("/process/initial_state/path", "path required");
  } else {
    throw ConfigError("/process/initial_state/kind", "unknown state kind '" + s.kind + "'");
  }
  for (std::size_t k = 0; k < c.channels.size(); ++k) {
    const auto& ch = c.channels[k];
    const std::string at = "/process/channels/" + std::to_string(k);
    if (ch.kind == "depolarizing" || ch.kind == "bit_flip") {
      if (auto e = detail::unit_interval_check(ch.p); !e.empty()) throw ConfigError(at + "/p", "probability " + e);
    } else if (ch.kind == "amplitude_damping") {
      if (auto e = detail::unit_interval_check(ch.gamma); !e.empty()) throw ConfigError(at + "/gamma", "gamma " + e);
    } else if (ch.kind == "file") {
      if (ch.path.empty()) throw ConfigError(at + "/path", "path required");
    } else if (ch.kind != "identity") {
      throw ConfigError(at + "/kind", "unknown channel kind '" + ch.kind + "'");
    }
  }
  try {
    (void)variant_from_string(c.variant);
  } catch (const Error&) {
    throw ConfigError("/variant", "unknown variant '" + c.variant + "'");
  }
  if (!c.frames.empty() && c.frames.size() != c.times()) {
    throw ConfigError("/frames", "expected " + std::to_string(c.times()) + " frames, one per time");
  }
  for (std::size_t k = 0; k < c.frames.size(); ++k) {
    const auto& f = c.frames[k];
    const std::string at = "/frames/" + std::to_string(k);
    if (f.kind == "projective") {
      if (f.basis != "z" && f.basis != "computational" && f.basis != "x" && f.basis != "y") {
        throw ConfigError(at + "/basis", "unknown basis '" + f.basis + "'");
      }
    } else if (f.kind != "ic") {
      throw ConfigError(at + "/kind", "unknown frame kind '" + f.kind + "'");
    }
  }
  if (c.schedule != "snapshot" && c.schedule != "projective") {
    throw ConfigError("/schedule", "unknown schedule '" + c.schedule + "'");
  }
  if (c.sweep.n_values.empty()) throw ConfigError("/sweep/n_values", "grid is empty");
  for (std::size_t i = 0; i < c.sweep.n_values.size(); ++i) {
    if (c.sweep.n_values[i] < 1) throw ConfigError("/sweep/n_values/" + std::to_string(i), "N must be >= 1");
  }
  if (c.sweep.trials < 1) throw ConfigError("/sweep/trials", "trials must be >= 1");
  if (!(c.sweep.delta > 0 && c.sweep.delta < 1)) throw ConfigError("/sweep/delta", "delta must lie in (0, 1)");
  if (c.threads < 1) throw ConfigError("/threads", "threads must be >= 1");
  if (c.shots < 1) throw ConfigError("/shots", "shots must be >= 1");
  if (c.sampling_cap < 1) throw ConfigError("/sampling_cap", "cap must be >= 1");
  const std::pair<const char*, double> tols[] = {{"psd", c.tolerances.psd},   {"recon", c.tolerances.recon},
                                                 {"pd", c.tolerances.pd},     {"rank", c.tolerances.rank},
                                                 {"pinv", c.tolerances.pinv}};
  for (const auto& [name, v] : tols) {
    if (!(v > 0)) throw ConfigError(std::string("/tolerances/") + name, "tolerance must be positive");
  }
  if (c.fit.max_iterations < 1) throw ConfigError("/fit/max_iterations", "must be >= 1");
  if (c.fit.inner_iterations < 1) throw ConfigError("/fit/inner_iterations", "must be >= 1");
  if (c.fit.projection_iterations < 1) throw ConfigError("/fit/projection_iterations", "must be >= 1");
  if (c.fit.patience < 1) throw ConfigError("/fit/patience", "must be >= 1");
  if (!(c.fit.fit_tol > 0)) throw ConfigError("/fit/fit_tol", "must be positive");
}

/// Defaults are kept for absent keys; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::Reader top(j, "");
  top.reject_unknown({"process", "variant", "frames", "schedule", "sweep", "seed", "threads", "shots", "sampling_cap",
                      "tolerances", "fit", "output_dir"});
  if (j.contains("process")) {
    detail::Reader proc(j.at("process"), "/process");
    proc.reject_unknown({"initial_state", "channels"});
    if (j.at("process").contains("initial_state")) {
      detail::Reader st(j.at("process").at("initial_state"), "/process/initial_state");
      st.get("kind", c.initial_state.kind);
      if (c.initial_state.kind == "pure") st.reject_unknown({"kind", "re", "im"});
      else if (c.initial_state.kind == "maximally_mixed") st.reject_unknown({"kind", "d"});
      else if (c.initial_state.kind == "file") st.reject_unknown({"kind", "path"});
      st.get("d", c.initial_state.d);
      st.get("re", c.initial_state.re);
      st.get("im", c.initial_state.im);
      st.get("path", c.initial_state.path);
    }
    if (j.at("process").contains("channels")) {
      const auto& arr = j.at("process").at("channels");
      if (!arr.is_array()) throw ConfigError("/process/channels", "expected an array");
      c.channels.clear();
      for (std::size_t k = 0; k < arr.size(); ++k) {
        detail::Reader ch(arr[k], "/process/channels/" + std::to_string(k));
        ChannelSpec spec;
        ch.get("kind", spec.kind);
        if (spec.kind == "identity") ch.reject_unknown({"kind"});
        else if (spec.kind == "depolarizing" || spec.kind == "bit_flip") ch.reject_unknown({"kind", "p"});
        else if (spec.kind == "amplitude_damping") ch.reject_unknown({"kind", "gamma"});
        else if (spec.kind == "file") ch.reject_unknown({"kind", "path"});
        ch.get("p", spec.p);
        ch.get("gamma", spec.gamma);
        ch.get("path", spec.path);
        c.channels.push_back(spec);
      }
    }
  }
  top.get("variant", c.variant);
  if (j.contains("frames")) {
    const auto& arr = j.at("frames");
    if (!arr.is_array()) throw ConfigError("/frames", "expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      detail::Reader fr(arr[k], "/frames/" + std::to_string(k));
      FrameSpec spec;
      fr.get("kind", spec.kind);
      fr.reject_unknown(spec.kind == "projective" ? std::initializer_list<const char*>{"kind", "basis"}
                                                  : std::initializer_list<const char*>{"kind"});
      fr.get("basis", spec.basis);
      c.frames.push_back(spec);
    }
  }
  top.get("schedule", c.schedule);
  if (j.contains("sweep")) {
    detail::Reader sw(j.at("sweep"), "/sweep");
    sw.reject_unknown({"n_values", "trials", "delta", "fit", "record_wall_time"});
    if (j.at("sweep").contains("n_values")) {
      const auto& arr = j.at("sweep").at("n_values");
      if (!arr.is_array()) throw ConfigError("/sweep/n_values", "expected an array");
      c.sweep.n_values.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number_integer() || (arr[i].is_number_integer() && !arr[i].is_number_unsigned())) {
          throw ConfigError("/sweep/n_values/" + std::to_string(i), "expected a non-negative integer");
        }
        c.sweep.n_values.push_back(arr[i].get<std::uint64_t>());
      }
    }
    sw.get("trials", c.sweep.trials);
    sw.get("delta", c.sweep.delta);
    sw.get("fit", c.sweep.fit);
    sw.get("record_wall_time", c.sweep.record_wall_time);
  }
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.get("shots", c.shots);
  top.get("sampling_cap", c.sampling_cap);
  if (j.contains("tolerances")) {
    detail::Reader t(j.at("tolerances"), "/tolerances");
    t.reject_unknown({"psd", "recon", "pd", "rank", "pinv"});
    t.get("psd", c.tolerances.psd);
    t.get("recon", c.tolerances.recon);
    t.get("pd", c.tolerances.pd);
    t.get("rank", c.tolerances.rank);
    t.get("pinv", c.tolerances.pinv);
  }
  if (j.contains("fit")) {
    detail::Reader f(j.at("fit"), "/fit");
    f.reject_unknown({"max_iterations", "inner_iterations", "projection_iterations", "fit_tol", "patience"});
    f.get("max_iterations", c.fit.max_iterations);
    f.get("inner_iterations", c.fit.inner_iterations);
    f.get("projection_iterations", c.fit.projection_iterations);
    f.get("fit_tol", c.fit.fit_tol);
    f.get("patience", c.fit.patience);
  }
  top.get("output_dir", c.output_dir);
  if (c.frames.empty()) c.frames.assign(c.times(), FrameSpec{});
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Line-aware parsing

namespace detail {

struct Cursor {
  const char* begin = nullptr;
  const char* pos = nullptr;
};

/// Input iterator that publishes its position for the SAX handler.
class TrackingIterator {
 public:
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  TrackingIterator(const char* p, Cursor* c) : p_(p), c_(c) {}
  reference operator*() const { return *p_; }
  TrackingIterator& operator++() {
    ++p_;
    if (c_) c_->pos = p_;
    return *this;
  }
  TrackingIterator operator++(int) {
    auto t = *this;
    ++*this;
    return t;
  }
  bool operator==(const TrackingIterator& o) const { return p_ == o.p_; }
  bool operator!=(const TrackingIterator& o) const { return p_ != o.p_; }

 private:
  const char* p_;
  Cursor* c_;
};

/// Builds the DOM while recording the source line of every value.
class LocatingSax {
 public:
  using json = nlohmann::json;
  using number_integer_t = json::number_integer_t;
  using number_unsigned_t = json::number_unsigned_t;
  using number_float_t = json::number_float_t;
  using string_t = json::string_t;
  using binary_t = json::binary_t;

  LocatingSax(json& root, const Cursor& cursor, std::map<std::string, std::size_t>& lines)
      : dom_(root, true), cursor_(cursor), lines_(lines) {}

  bool null() { return scalar(), dom_.null(); }
  bool boolean(bool v) { return scalar(), dom_.boolean(v); }
  bool number_integer(number_integer_t v) { return scalar(), dom_.number_integer(v); }
  bool number_unsigned(number_unsigned_t v) { return scalar(), dom_.number_unsigned(v); }
  bool number_float(number_float_t v, const string_t& s) { return scalar(), dom_.number_float(v, s); }
  bool string(string_t& v) { return scalar(), dom_.string(v); }
  bool binary(binary_t& v) { return scalar(), dom_.binary(v); }
  bool start_object(std::size_t n) { return open(false), dom_.start_object(n); }
  bool end_object() { return close(), dom_.end_object(); }
  bool start_array(std::size_t n) { return open(true), dom_.start_array(n); }
  bool end_array() { return close(), dom_.end_array(); }
  bool key(string_t& k) {
    if (!stack_.empty()) stack_.back().key = k;
    return dom_.key(k);
  }
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) {
    error_byte = pos;
    error_text = ex.what();
    return false;
  }

  std::size_t error_byte = 0;
  std::string error_text;

 private:
  struct Level {
    bool array;
    std::size_t index = 0;
    std::string key;
  };

  std::string pointer() const {
    std::string p;
    for (const auto& l : stack_) p += "/" + (l.array ? std::to_string(l.index) : l.key);
    return p;
  }

  std::size_t line_before(const char* end) const {
    return 1 + static_cast<std::size_t>(std::count(cursor_.begin, end, '\n'));
  }

  void advance() {
    if (!stack_.empty() && stack_.back().array) ++stack_.back().index;
  }

  void scalar() {
    // The lexer may have consumed one character past the token.
    const char* e = cursor_.pos;
    while (e > cursor_.begin && std::string_view(" \t\r\n,]}").find(e[-1]) != std::string_view::npos) --e;
    lines_[pointer()] = line_before(e);
    advance();
  }
  void open(bool array) {
    lines_[pointer()] = line_before(cursor_.pos > cursor_.begin ? cursor_.pos - 1 : cursor_.pos);
    stack_.push_back({array, 0, {}});
  }
  void close() {
    stack_.pop_back();
    advance();
  }

  nlohmann::detail::json_sax_dom_parser<json> dom_;
  const Cursor& cursor_;
  std::map<std::string, std::size_t>& lines_;
  std::vector<Level> stack_;
};

}  // namespace detail

struct LocatedJson {
  nlohmann::json value;
  std::map<std::string, std::size_t> lines;  // JSON pointer -> 1-based line

  /// Line of the pointer or of its closest recorded ancestor.
  std::size_t line_of(std::string pointer) const {
    while (true) {
      if (auto it = lines.find(pointer); it != lines.end()) return it->second;
      if (pointer.empty()) return 1;
      pointer.erase(pointer.rfind('/'));
    }
  }
};

inline LocatedJson parse_located(const std::string& text, const std::string& source) {
  LocatedJson out;
  detail::Cursor cursor{text.data(), text.data()};
  detail::LocatingSax sax(out.value, cursor, out.lines);
  if (!nlohmann::json::sax_parse(detail::TrackingIterator(text.data(), &cursor),
                                 detail::TrackingIterator(text.data() + text.size(), &cursor), &sax)) {
    const auto upto = std::min<std::size_t>(sax.error_byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorCode::invalid_argument,
                source + ":" + std::to_string(line) + ": malformed JSON: " + sax.error_text);
  }
  return out;
}

/// Parses and validates a configuration document; errors carry "source:line: /pointer: message".
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  const LocatedJson doc = parse_located(text, source);
  try {
    return config_from_json(doc.value);
  } catch (const ConfigError& e) {
    throw e.located(source + ":" + std::to_string(doc.line_of(e.pointer())));
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str(), path.string());
  c.base_dir = path.parent_path();
  return c;
}

// ---------------------------------------------------------------------------
// Construction

struct Experiment {
  TemporalProcess process;
  std::vector<OperatorFrame> frames;
  InstrumentSchedule schedule;
  Variant variant;
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::io, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, p.string() + ": " + e.what());
  }
}

inline std::filesystem::path resolve(const ExperimentConfig& c, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

}  // namespace detail

inline Operator build_initial_state(const ExperimentConfig& c) {
  const auto& s = c.initial_state;
  if (s.kind == "pure") {
    Vector psi(static_cast<Eigen::Index>(s.re.size()));
    for (std::size_t i = 0; i < s.re.size(); ++i) psi(static_cast<Eigen::Index>(i)) = cplx(s.re[i], s.im.empty() ? 0.0 : s.im[i]);
    psi.normalize();
    return projector(psi);
  }
  if (s.kind == "maximally_mixed") {
    return Operator::identity({s.d}) * cplx(1.0 / static_cast<double>(s.d));
  }
  return detail::read_json_file(detail::resolve(c, s.path)).get<Operator>();
}

inline Superoperator build_channel(const ExperimentConfig& c, std::size_t k, std::size_t d_in) {
  const auto& ch = c.channels.at(k);
  auto qubit = [&] {
    if (d_in != 2) throw ConfigError("/process/channels/" + std::to_string(k), ch.kind + " needs a qubit input");
  };
  if (ch.kind == "identity") return channels::identity(d_in);
  if (ch.kind == "depolarizing") return channels::depolarizing(d_in, ch.p);
  if (ch.kind == "amplitude_damping") return qubit(), channels::amplitude_damping(ch.gamma);
  if (ch.kind == "bit_flip") return qubit(), channels::bit_flip(ch.p);
  return superoperator_from_json(detail::read_json_file(detail::resolve(c, ch.path)));
}

inline Experiment build_experiment(const ExperimentConfig& c) {
  Operator rho = build_initial_state(c);
  std::vector<Superoperator> chans;
  std::size_t d = rho.dim();
  for (std::size_t k = 0; k < c.channels.size(); ++k) {
    chans.push_back(build_channel(c, k, d));
    d = chans.back().d_out();
  }
  TemporalProcess process(std::move(rho), std::move(chans), c.tolerances);

  std::vector<OperatorFrame> frames;
  InstrumentSchedule schedule;
  const std::vector<FrameSpec> fs = c.frames.empty() ? std::vector<FrameSpec>(c.times()) : c.frames;
  for (std::size_t k = 0; k < process.times(); ++k) {
    const std::size_t dk = process.dims()[k];
    if (fs[k].kind == "ic") {
      frames.push_back(ic_povm(dk, c.tolerances));
    } else {
      try {
        frames.push_back(projective_frame(named_basis(fs[k].basis, dk), c.tolerances));
      } catch (const Error& e) {
        throw ConfigError("/frames/" + std::to_string(k) + "/basis", e.what());
      }
    }
    if (c.schedule == "snapshot") {
      schedule.steps.push_back(snapshot_instrument(dk, c.tolerances));
    } else {
      if (fs[k].kind != "projective") {
        throw ConfigError("/schedule", "projective schedule needs projective frames");
      }
      schedule.steps.push_back(projective_instrument(frames.back(), c.tolerances));
    }
  }
  return {std::move(process), std::move(frames), std::move(schedule), variant_from_string(c.variant)};
}

/// Upsilon of the configured process in the configured variant.
inline TemporalState true_state(const Experiment& e) { return state_from_tqd(exact_tqd(e.process, e.frames, e.variant)); }

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::string variant;
  std::size_t d_total = 0;
  std::size_t M = 0;
  std::uint64_t N = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double error_2norm = 0;
  double error_after_fit = std::numeric_limits<double>::quiet_NaN();
  double t_norm_bound = 0;
  double epsilon_target = 0;
  double wall_ms = 0;
};

struct SweepSummary {
  std::string variant;
  std::size_t M = 0;
  std::size_t d_total = 0;
  double t_norm = 0;
  double c_theory = 0;
  double delta = 0;
  double slope = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::uint64_t> n_values;
  std::vector<double> median_error;
  std::vector<double> median_error_after_fit;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by (N index, trial)
  SweepSummary summary;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = static_cast<double>(n) * sxx - sx * sx;
  if (den == 0) return std::numeric_limits<double>::quiet_NaN();
  return (static_cast<double>(n) * sxy - sx * sy) / den;
}

/// Runs every (N, trial) cell; trial streams use seed xor (n_index * trials + trial).
inline SweepResult run_sweep(const Experiment& e, const ExperimentConfig& c) {
  if (e.variant.side == Side::doubled) throw ConfigError("/variant", "sweeps need a reconstructible variant");
  const Postprocessing pp = build_postprocessing(e.frames, e.schedule, e.variant);
  if (!pp.reconstructs_state()) throw ConfigError("/frames", "sweeps need informationally complete frames");
  const TemporalState truth = true_state(e);
  const std::size_t M = e.schedule.trajectories();
  const bool exact_joint = M <= c.sampling_cap;
  const std::optional<TrajectoryDistribution> dist =
      exact_joint ? std::optional(trajectory_distribution(e.process, e.schedule, c.tolerances)) : std::nullopt;

  const std::size_t trials = c.sweep.trials;
  const std::size_t cells = c.sweep.n_values.size() * trials;
  SweepResult res;
  res.rows.resize(cells);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(c.threads);

  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = next++; i < cells; i = next++) {
        const auto start = std::chrono::steady_clock::now();
        const std::size_t ni = i / trials;
        SweepRow row;
        row.variant = to_string(e.variant);
        row.d_total = e.process.total_dim();
        row.M = M;
        row.N = c.sweep.n_values[ni];
        row.trial = i % trials;
        row.seed = derive_seed(c.seed, i);
        const SampleBatch b = exact_joint ? sample(*dist, row.N, row.seed, c.tolerances)
                                          : sample_sequential(e.process, e.schedule, row.N, row.seed);
        const TemporalState est = estimate_state(empirical(b), pp);
        row.error_2norm = schatten_norm(est.op.matrix() - truth.op.matrix(), Schatten::two);
        if (c.sweep.fit) {
          const auto fit = fit_temporal_state(est, e.process.dims(), c.fit, c.tolerances);
          row.error_after_fit = schatten_norm(fit.upsilon_fit.op.matrix() - truth.op.matrix(), Schatten::two);
        }
        row.t_norm_bound = pp.t_norm;
        row.epsilon_target = epsilon_bound(pp.t_norm, M, row.N, c.sweep.delta);
        if (c.sweep.record_wall_time) {
          row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        res.rows[i] = std::move(row);
      }
    } catch (...) {
      failures[worker] = std::current_exception();
      next = cells;
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < c.threads; ++w) pool.emplace_back(work, w);
    work(0);
  }
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);

  auto& s = res.summary;
  s.variant = to_string(e.variant);
  s.M = M;
  s.d_total = e.process.total_dim();
  s.t_norm = pp.t_norm;
  s.c_theory = theoretical_c(pp);
  s.delta = c.sweep.delta;
  std::vector<double> xs;
  for (std::size_t ni = 0; ni < c.sweep.n_values.size(); ++ni) {
    std::vector<double> errs, fits;
    for (std::size_t t = 0; t < trials; ++t) {
      errs.push_back(res.rows[ni * trials + t].error_2norm);
      if (c.sweep.fit) fits.push_back(res.rows[ni * trials + t].error_after_fit);
    }
    s.n_values.push_back(c.sweep.n_values[ni]);
    s.median_error.push_back(median(errs));
    s.median_error_after_fit.push_back(median(fits));
    xs.push_back(static_cast<double>(c.sweep.n_values[ni]));
  }
  s.slope = loglog_slope(xs, s.median_error);
  return res;
}

// ---------------------------------------------------------------------------
// Output

/// Shortest decimal string that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "variant,d_total,M,N,trial,seed,error_2norm,error_after_fit,t_norm_bound,epsilon_target,wall_ms\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.d_total << ',' << r.M << ',' << r.N << ',' << r.trial << ',' << r.seed << ','
        << format_double(r.error_2norm) << ',' << format_double(r.error_after_fit) << ','
        << format_double(r.t_norm_bound) << ',' << format_double(r.epsilon_target) << ',' << format_double(r.wall_ms)
        << '\n';
  }
}

inline nlohmann::json to_json(const SweepSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t i = 0; i < s.n_values.size(); ++i) {
    grid.push_back({{"N", s.n_values[i]},
                    {"median_error_2norm", num(s.median_error[i])},
                    {"median_error_after_fit", num(s.median_error_after_fit[i])}});
  }
  return {{"variant", s.variant}, {"M", s.M},         {"d_total", s.d_total},       {"t_norm", num(s.t_norm)},
          {"c_theory", num(s.c_theory)}, {"delta", s.delta}, {"loglog_slope", num(s.slope)}, {"grid", grid}};
}

}  // namespace tst
