#include "handfold/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

namespace handfold {

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  return json{{"joints", cfg.joints},
              {"local_folds", cfg.local_folds},
              {"points", cfg.points},
              {"local_level", local_level_name(cfg.local_level)},
              {"local_feature", cfg.local_feature},
              {"spatial_dependency", cfg.spatial_dependency},
              {"loss_variant", cfg.loss_variant == SmoothL1Variant::paper ? "paper" : "huber"}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.joints = j.at("joints").get<int>();
  cfg.local_folds = j.at("local_folds").get<int>();
  cfg.points = j.at("points").get<int>();
  const std::string lvl = j.at("local_level").get<std::string>();
  cfg.local_level = lvl == "input" ? LocalLevel::input
                    : lvl == "2"   ? LocalLevel::l2
                                   : LocalLevel::l1;
  cfg.local_feature = j.at("local_feature").get<bool>();
  cfg.spatial_dependency = j.at("spatial_dependency").get<bool>();
  cfg.loss_variant = j.at("loss_variant").get<std::string>() == "huber"
                         ? SmoothL1Variant::huber
                         : SmoothL1Variant::paper;
  return cfg;
}

void write_tensor(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

void read_tensor(std::ifstream& in, Tensor<float>& t) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!in) throw FormatError("truncated checkpoint payload");
}

json shape_json(const Shape& s) {
  json a = json::array();
  for (auto e : s) a.push_back(e);
  return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const HandFoldingNet<float>& model,
                     const CheckpointMeta& meta, const Adam<float>* optimizer) {
  json header;
  header["version"] = meta.version;
  header["epoch"] = meta.epoch;
  header["base_seed"] = meta.base_seed;
  header["config"] = config_to_json(model.config());

  const SkeletonPrior& skel = model.skeleton();
  json skel_json;
  skel_json["names"] = skel.joint_names;
  json coords = json::array();
  for (int i = 0; i < skel.joint_count(); ++i) {
    coords.push_back(skel.coords2d(i, 0));
    coords.push_back(skel.coords2d(i, 1));
  }
  skel_json["coords"] = coords;
  skel_json["adj1"] = model.adjacency().adj1;
  skel_json["adj2"] = model.adjacency().adj2;
  header["skeleton"] = skel_json;

  json tensors = json::array();
  for (const auto& e : model.params().params()) {
    tensors.push_back({{"name", e.name}, {"kind", "param"}, {"shape", shape_json(e.value.shape())}});
  }
  for (const auto& e : model.params().buffers()) {
    tensors.push_back({{"name", e.name}, {"kind", "buffer"}, {"shape", shape_json(e.value.shape())}});
  }
  header["optimizer"] = optimizer != nullptr;
  if (optimizer) header["adam_step"] = optimizer->step_count();
  header["tensors"] = tensors;

  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  out.write("HFLD", 4);
  std::uint32_t version = meta.version;
  out.write(reinterpret_cast<const char*>(&version), 4);
  std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), 8);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& e : model.params().params()) write_tensor(out, e.value);
  for (const auto& e : model.params().buffers()) write_tensor(out, e.value);
  if (optimizer) {
    const auto& m = const_cast<Adam<float>*>(optimizer)->first_moments();
    const auto& v = const_cast<Adam<float>*>(optimizer)->second_moments();
    for (const auto& t : m) write_tensor(out, t);
    for (const auto& t : v) write_tensor(out, t);
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HFLD", 4) != 0) {
    throw FormatError("bad checkpoint magic in " + path + " (expected HFLD)");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), 8);
  if (!in || head_len == 0 || head_len > (1u << 26)) {
    throw FormatError("bad checkpoint header length in " + path);
  }
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw FormatError("truncated checkpoint header in " + path);

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw FormatError("unparseable checkpoint header: " + std::string(e.what()));
  }

  LoadedCheckpoint loaded;
  loaded.meta.version = version;
  loaded.meta.epoch = header.at("epoch").get<std::int64_t>();
  loaded.meta.base_seed = header.at("base_seed").get<std::uint64_t>();
  loaded.meta.model = config_from_json(header.at("config"));
  loaded.meta.has_optimizer = header.value("optimizer", false);

  const json& skel_json = header.at("skeleton");
  SkeletonPrior skel;
  skel.joint_names = skel_json.at("names").get<std::vector<std::string>>();
  const auto coords = skel_json.at("coords").get<std::vector<double>>();
  skel.coords2d.resize(static_cast<Eigen::Index>(skel.joint_names.size()), 2);
  for (std::size_t i = 0; i < skel.joint_names.size(); ++i) {
    skel.coords2d(static_cast<Eigen::Index>(i), 0) = coords[2 * i];
    skel.coords2d(static_cast<Eigen::Index>(i), 1) = coords[2 * i + 1];
  }
  AdjacencyMap adj;
  adj.adj1 = skel_json.at("adj1").get<std::vector<int>>();
  adj.adj2 = skel_json.at("adj2").get<std::vector<int>>();

  loaded.model = std::make_unique<HandFoldingNet<float>>(loaded.meta.model, skel, adj,
                                                         /*init_seed=*/0);

  // Validate the tensor table against the freshly built model, then read the
  // payloads in header order.
  const json& tensors = header.at("tensors");
  std::size_t expect = loaded.model->params().params().size() +
                       loaded.model->params().buffers().size();
  if (tensors.size() != expect) {
    throw FormatError("checkpoint tensor table does not match the model layout");
  }
  std::size_t ti = 0;
  for (auto& e : loaded.model->params().mutable_params()) {
    if (tensors[ti].at("name").get<std::string>() != e.name) {
      throw FormatError("checkpoint tensor order mismatch at '" + e.name + "'");
    }
    ++ti;
  }
  for (auto& e : loaded.model->params().mutable_buffers()) {
    if (tensors[ti].at("name").get<std::string>() != e.name) {
      throw FormatError("checkpoint tensor order mismatch at '" + e.name + "'");
    }
    ++ti;
  }
  for (auto& e : loaded.model->params().mutable_params()) read_tensor(in, e.value);
  for (auto& e : loaded.model->params().mutable_buffers()) read_tensor(in, e.value);

  if (loaded.meta.has_optimizer) {
    loaded.meta.adam_step = header.at("adam_step").get<std::int64_t>();
    typename Adam<float>::Config acfg;
    loaded.optimizer = std::make_unique<Adam<float>>(loaded.model->params(), acfg);
    loaded.optimizer->set_step_count(loaded.meta.adam_step);
    for (auto& t : loaded.optimizer->first_moments()) read_tensor(in, t);
    for (auto& t : loaded.optimizer->second_moments()) read_tensor(in, t);
  }
  return loaded;
}

}  // namespace handfold
