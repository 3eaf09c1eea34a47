#pragma once

#include <json.hpp>

#include <string>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"

namespace grs::json_util {

using Json = nlohmann::json;

inline Vec3 to_vec3(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InputError(what + ": expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw InputError(what + ": expected an array of 3 numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline Json from_vec3(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline Vec3 vec3_or(const Json& j, const char* key, const Vec3& fallback) {
  return j.contains(key) ? to_vec3(j.at(key), key) : fallback;
}

inline Json pose_to_json(const SE3Pose& p) {
  return Json{{"translation", from_vec3(p.translation)},
              {"rotation_xyzw", Json::array({p.rotation.x(), p.rotation.y(), p.rotation.z(), p.rotation.w()})}};
}

}  // namespace grs::json_util
