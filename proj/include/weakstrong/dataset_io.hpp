#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "weakstrong/config.hpp"
#include "weakstrong/synthdata.hpp"
#include "weakstrong/util.hpp"

namespace weakstrong {

constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline json instance_json(const Instance& inst, bool with_image) {
  json j{{"pattern", inst.true_pattern}, {"features", inst.features}};
  if (inst.weak_label) j["weak_label"] = *inst.weak_label == kLabelHigh ? "high" : "low";
  if (inst.strong_label) j["strong_label"] = *inst.strong_label == kLabelHigh ? "high" : "low";
  if (with_image && !inst.image.empty()) {
    std::vector<int> px(inst.image.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<int>(inst.image.data[i]);
    j["image"] = json{{"h", inst.image.height}, {"w", inst.image.width}, {"px", px}};
  }
  return j;
}

inline Instance instance_from_json(const json& j, const std::string& path) {
  cfgio::Reader r(j, path);
  r.allow({"pattern", "features", "weak_label", "strong_label", "image"});
  Instance inst;
  inst.true_pattern = static_cast<int>(r.uinteger_required("pattern"));
  pattern_index(inst.true_pattern);  // range check
  inst.features = r.number_list("features");
  auto label_of = [&](const char* key) {
    const std::string v = r.str(key, "");
    if (v == "low") return kLabelLow;
    if (v == "high") return kLabelHigh;
    throw ConfigError(r.field(key) + ": expected 'low' or 'high'");
  };
  if (r.has("weak_label")) inst.weak_label = label_of("weak_label");
  if (r.has("strong_label")) inst.strong_label = label_of("strong_label");
  if (r.has("image")) {
    cfgio::Reader ir(r.child("image"), r.field("image"));
    ir.allow({"h", "w", "px"});
    inst.image = Image(ir.uinteger_required("h"), ir.uinteger_required("w"));
    const json& px = ir.child("px");
    if (!px.is_array() || px.size() != inst.image.data.size()) {
      throw ConfigError(ir.field("px") + ": pixel count does not match h*w*3");
    }
    for (std::size_t i = 0; i < inst.image.data.size(); ++i) {
      inst.image.data[i] = px.at(i).get<double>();
    }
  }
  return inst;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& dataset) {
  const bool images = dataset.config.substrate == Substrate::images;
  json j{{"kind", "weakstrong-dataset"},
         {"format_version", kDatasetFormatVersion},
         {"config", gen_config_json(dataset.config)}};
  json bags = json::array();
  for (const Bag& bag : dataset.bags) {
    json bj{{"bag_id", bag.bag_id},
            {"primary", bag.primary_pattern},
            {"secondary", bag.secondary_pattern},
            {"score", bag.gleason_score},
            {"group", group_name(bag.group)},
            {"weak_label", bag.weak_label == kLabelHigh ? "high" : "low"}};
    json members = json::array();
    for (const Instance& inst : bag.instances) members.push_back(detail::instance_json(inst, images));
    bj["instances"] = members;
    bags.push_back(bj);
  }
  j["bags"] = bags;
  json strong = json::array();
  for (const Instance& inst : dataset.strong) strong.push_back(detail::instance_json(inst, images));
  j["strong"] = strong;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_dataset: cannot open " + path);
  os << j.dump(1) << '\n';
  if (!os) throw Error("save_dataset: write failed for " + path);
}

namespace detail {

inline Dataset dataset_from_json(const json& j) {
  cfgio::Reader r(j, "dataset");
  r.allow({"kind", "format_version", "config", "bags", "strong"});
  if (r.str("kind", "") != "weakstrong-dataset") {
    throw ConfigError("dataset.kind: not a weakstrong dataset file");
  }
  if (r.uinteger_required("format_version") != kDatasetFormatVersion) {
    throw ConfigError("dataset.format_version: unsupported version");
  }
  Dataset out;
  out.config = parse_gen_config(r.child("config"), "dataset.config", 0);

  static const std::array<std::pair<const char*, GleasonGroup>, 5> group_names{{
      {"<=6", GleasonGroup::g6},
      {"7=3+4", GleasonGroup::g7_34},
      {"7=4+3", GleasonGroup::g7_43},
      {"8", GleasonGroup::g8},
      {"9-10", GleasonGroup::g9_10},
  }};
  for (const json& bj : r.child("bags")) {
    cfgio::Reader br(bj, "dataset.bags[]");
    br.allow({"bag_id", "primary", "secondary", "score", "group", "weak_label", "instances"});
    Bag bag;
    bag.bag_id = static_cast<int>(br.uinteger_required("bag_id"));
    bag.primary_pattern = static_cast<int>(br.uinteger_required("primary"));
    bag.secondary_pattern = static_cast<int>(br.uinteger_required("secondary"));
    bag.gleason_score = static_cast<int>(br.uinteger_required("score"));
    const std::string gname = br.str("group", "");
    bool found = false;
    for (const auto& [name, value] : group_names) {
      if (gname == name) {
        bag.group = value;
        found = true;
      }
    }
    if (!found) throw ConfigError("dataset.bags[].group: unknown group '" + gname + "'");
    bag.weak_label = br.str("weak_label", "") == "high" ? kLabelHigh : kLabelLow;
    for (const json& ij : br.child("instances")) {
      Instance inst = detail::instance_from_json(ij, "dataset.bags[].instances[]");
      inst.bag_id = bag.bag_id;
      bag.instances.push_back(std::move(inst));
    }
    out.bags.push_back(std::move(bag));
  }
  for (const json& ij : r.child("strong")) {
    out.strong.push_back(detail::instance_from_json(ij, "dataset.strong[]"));
  }

  // re-check the bag invariants on load: files are editable, and downstream
  // code relies on the label semantics holding
  for (const Bag& bag : out.bags) {
    const std::string where = "dataset.bags[" + std::to_string(bag.bag_id) + "]";
    if (bag.gleason_score != bag.primary_pattern + bag.secondary_pattern) {
      throw ConfigError(where + ".score: must equal primary + secondary");
    }
    if ((bag.weak_label == kLabelLow) != (bag.gleason_score <= 7)) {
      throw ConfigError(where + ".weak_label: inconsistent with the score");
    }
    for (const Instance& inst : bag.instances) {
      if (!inst.weak_label || *inst.weak_label != bag.weak_label) {
        throw ConfigError(where + ".instances: weak labels must match the bag");
      }
      if (inst.features.size() != out.config.input_dim) {
        throw ConfigError(where + ".instances: feature length must equal config input_dim");
      }
    }
  }
  for (const Instance& inst : out.strong) {
    if (!inst.strong_label) {
      throw ConfigError("dataset.strong[]: strong_label is required");
    }
    if (inst.features.size() != out.config.input_dim) {
      throw ConfigError("dataset.strong[]: feature length must equal config input_dim");
    }
  }
  return out;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("dataset: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("dataset: " + path + " is not valid JSON: " + e.what());
  }
  try {
    return detail::dataset_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("dataset: " + path + ": " + e.what());
  }
}

// Flat instance table for offline inspection. Strong rows use bag_id -1.
inline void export_dataset_csv(const std::string& path, const Dataset& dataset) {
  std::ofstream os(path);
  if (!os) throw Error("export_dataset_csv: cannot open " + path);
  os << "bag_id,instance,true_pattern,weak_label,strong_label,gleason_score,gleason_group";
  for (std::size_t d = 0; d < dataset.config.input_dim; ++d) os << ",f" << d;
  os << '\n';
  const auto label_str = [](const std::optional<int>& v) {
    return v ? (*v == kLabelHigh ? std::string("high") : std::string("low")) : std::string("");
  };
  for (const Bag& bag : dataset.bags) {
    for (std::size_t i = 0; i < bag.instances.size(); ++i) {
      const Instance& inst = bag.instances[i];
      os << bag.bag_id << ',' << i << ',' << inst.true_pattern << ',' << label_str(inst.weak_label)
         << ',' << label_str(inst.strong_label) << ',' << bag.gleason_score << ','
         << group_name(bag.group);
      for (double f : inst.features) os << ',' << format_double(f);
      os << '\n';
    }
  }
  for (std::size_t i = 0; i < dataset.strong.size(); ++i) {
    const Instance& inst = dataset.strong[i];
    os << "-1," << i << ',' << inst.true_pattern << ',' << label_str(inst.weak_label) << ','
       << label_str(inst.strong_label) << ",,";
    for (double f : inst.features) os << ',' << format_double(f);
    os << '\n';
  }
  if (!os) throw Error("export_dataset_csv: write failed for " + path);
}

}  // namespace weakstrong
