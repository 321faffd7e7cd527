#pragma once

#include <json.hpp>

#include "core/pat.hpp"
#include "core/phantoms.hpp"

// JSON bindings for configuration types (nlohmann ADL hooks).
namespace opcorr {

inline void to_json(nlohmann::json& j, const PatConfig& c) {
  j = nlohmann::json{{"n", c.n},   {"c", c.c},
                     {"dx", c.dx}, {"dt", c.dt},
                     {"n_t", c.n_t}, {"theta_max", c.theta_max},
                     {"pad_factor", c.pad_factor}};
}

inline void from_json(const nlohmann::json& j, PatConfig& c) {
  c = PatConfig{};
  c.n = j.value("n", c.n);
  if (!j.contains("n_t")) c.n_t = c.n;
  c.c = j.value("c", c.c);
  c.dx = j.value("dx", c.dx);
  c.dt = j.value("dt", c.dt);
  c.n_t = j.value("n_t", c.n_t);
  c.theta_max = j.value("theta_max", c.theta_max);
  c.pad_factor = j.value("pad_factor", c.pad_factor);
}

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)}, {"n_train", s.n_train},
                     {"n_test", s.n_test},        {"n", s.n},
                     {"noise_level", s.noise_level}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s = DatasetSpec{};
  if (j.contains("kind")) s.kind = phantom_kind_from_string(j.at("kind").get<std::string>());
  s.n_train = j.value("n_train", s.n_train);
  s.n_test = j.value("n_test", s.n_test);
  s.n = j.value("n", s.n);
  s.noise_level = j.value("noise_level", s.noise_level);
  s.seed = j.value("seed", s.seed);
}

}  // namespace opcorr
