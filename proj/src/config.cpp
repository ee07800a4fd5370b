// SPDX-License-Identifier: Apache-2.0
#include "rim/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace rim {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw std::invalid_argument("config: " + what); }

void require_keys(const json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!obj.is_object()) bad(ctx + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) bad("unknown key '" + key + "' in " + ctx);
}

OpKind op_kind_from(const std::string& name) {
  if (name == "identity" || name == "denoise") return OpKind::identity;
  if (name == "mask" || name == "inpaint") return OpKind::mask;
  if (name == "gaussian") return OpKind::gaussian;
  if (name == "bernoulli") return OpKind::bernoulli;
  if (name == "fourier") return OpKind::fourier;
  if (name == "bicubic" || name == "sr") return OpKind::bicubic;
  bad("unknown operator kind '" + name + "'");
}

json op_descriptor_to_json(const OpDescriptor& d) {
  json j;
  j["kind"] = op_kind_name(d.kind);
  switch (d.kind) {
    case OpKind::identity:
      break;
    case OpKind::mask:
    case OpKind::fourier:
      j["p"] = d.p;
      j["seed"] = d.seed;
      break;
    case OpKind::gaussian:
    case OpKind::bernoulli:
      if (d.m > 0)
        j["m"] = d.m;
      else
        j["p"] = d.p;
      j["seed"] = d.seed;
      break;
    case OpKind::bicubic:
      j["factor"] = d.factor;
      break;
  }
  return j;
}

OpDescriptor op_descriptor_from_json(const json& j, const std::string& ctx) {
  require_keys(j, {"kind", "p", "m", "factor", "seed", "prob"}, ctx);
  if (!j.contains("kind")) bad(ctx + " is missing 'kind'");
  OpDescriptor d;
  d.kind = op_kind_from(j.at("kind").get<std::string>());
  if (j.contains("p")) d.p = j.at("p").get<double>();
  if (j.contains("m")) d.m = j.at("m").get<int>();
  if (j.contains("factor")) d.factor = j.at("factor").get<int>();
  if (j.contains("seed")) d.seed = j.at("seed").get<uint64_t>();
  return d;
}

const char* variant_name(Variant v) { return v == Variant::standard ? "standard" : "dilated"; }
const char* cell_name(CellKind c) {
  switch (c) {
    case CellKind::rim: return "rim";
    case CellKind::gdn: return "gdn";
    case CellKind::ffn: return "ffn";
  }
  return "?";
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["variant"] = variant_name(m.variant);
  j["cell"] = cell_name(m.cell);
  j["channels"] = m.channels;
  j["widths"] = {m.feat_in, m.feat_state, m.feat_out};
  j["gradient_space"] = m.x_space_grad ? "x" : "eta";
  return j;
}

ModelConfig model_from_json(const json& j) {
  require_keys(j, {"variant", "cell", "channels", "widths", "gradient_space"}, "model");
  ModelConfig m;
  if (j.contains("variant")) {
    const auto v = j.at("variant").get<std::string>();
    if (v == "standard")
      m.variant = Variant::standard;
    else if (v == "dilated")
      m.variant = Variant::dilated;
    else
      bad("unknown variant '" + v + "'");
  }
  if (j.contains("cell")) {
    const auto c = j.at("cell").get<std::string>();
    if (c == "rim")
      m.cell = CellKind::rim;
    else if (c == "gdn")
      m.cell = CellKind::gdn;
    else if (c == "ffn")
      m.cell = CellKind::ffn;
    else
      bad("unknown cell '" + c + "'");
  }
  if (j.contains("channels")) m.channels = j.at("channels").get<int>();
  if (j.contains("widths")) {
    const auto w = j.at("widths").get<std::vector<int>>();
    if (w.size() != 3) bad("widths must have 3 entries");
    m.feat_in = w[0];
    m.feat_state = w[1];
    m.feat_out = w[2];
  }
  if (j.contains("gradient_space")) {
    const auto g = j.at("gradient_space").get<std::string>();
    if (g == "x")
      m.x_space_grad = true;
    else if (g == "eta")
      m.x_space_grad = false;
    else
      bad("gradient_space must be 'eta' or 'x'");
  }
  return m;
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  auto tasks_eq = [](const std::vector<TrainTask>& a, const std::vector<TrainTask>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
      const auto& x = a[i];
      const auto& y = b[i];
      if (x.prob != y.prob || x.op.kind != y.op.kind || x.op.p != y.op.p || x.op.m != y.op.m ||
          x.op.factor != y.op.factor || x.op.seed != y.op.seed)
        return false;
    }
    return true;
  };
  return seed == o.seed && out_dir == o.out_dir && precision == o.precision && data == o.data &&
         model == o.model && train.steps == o.train.steps &&
         train.loss_weights == o.train.loss_weights && tasks_eq(train.tasks, o.train.tasks) &&
         train.sigmas == o.train.sigmas && train.quantize == o.train.quantize &&
         train.batch_size == o.train.batch_size && train.updates == o.train.updates &&
         train.adam.lr == o.train.adam.lr && train.adam.clip_norm == o.train.adam.clip_norm &&
         train.val_every == o.train.val_every && train.val_patches == o.train.val_patches;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  require_keys(j, {"seed", "out_dir", "precision", "data", "model", "train"}, "document root");
  ExperimentConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("precision")) {
    cfg.precision = j.at("precision").get<std::string>();
    if (cfg.precision != "f32" && cfg.precision != "f64") bad("precision must be 'f32' or 'f64'");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    require_keys(d, {"train_images", "val_images", "patch_size", "patch_stride", "val_patches"}, "data");
    if (d.contains("train_images")) cfg.data.train_images = d.at("train_images").get<std::string>();
    if (d.contains("val_images")) cfg.data.val_images = d.at("val_images").get<std::string>();
    if (d.contains("patch_size")) cfg.data.patch_size = d.at("patch_size").get<int>();
    if (d.contains("patch_stride")) cfg.data.patch_stride = d.at("patch_stride").get<int>();
    if (d.contains("val_patches")) cfg.data.val_patches = d.at("val_patches").get<int>();
  }
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t,
                 {"steps", "loss_weights", "tasks", "sigma", "quantize", "batch_size", "updates",
                  "learning_rate", "clip_norm", "val_every"},
                 "train");
    if (t.contains("steps")) cfg.train.steps = t.at("steps").get<int>();
    if (t.contains("loss_weights"))
      cfg.train.loss_weights = t.at("loss_weights").get<std::vector<double>>();
    if (t.contains("tasks")) {
      cfg.train.tasks.clear();
      for (const auto& task : t.at("tasks")) {
        TrainTask tt;
        tt.op = op_descriptor_from_json(task, "task");
        if (task.contains("prob")) tt.prob = task.at("prob").get<double>();
        cfg.train.tasks.push_back(tt);
      }
    }
    if (t.contains("sigma")) {
      if (t.at("sigma").is_number())
        cfg.train.sigmas = {t.at("sigma").get<double>()};
      else
        cfg.train.sigmas = t.at("sigma").get<std::vector<double>>();
    }
    if (t.contains("quantize")) cfg.train.quantize = t.at("quantize").get<bool>();
    if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("updates")) cfg.train.updates = t.at("updates").get<long>();
    if (t.contains("learning_rate")) cfg.train.adam.lr = t.at("learning_rate").get<double>();
    if (t.contains("clip_norm")) cfg.train.adam.clip_norm = t.at("clip_norm").get<double>();
    if (t.contains("val_every")) cfg.train.val_every = t.at("val_every").get<int>();
  }
  cfg.train.val_patches = cfg.data.val_patches;
  cfg.train.x_space_grad = cfg.model.x_space_grad;
  if (cfg.train.tasks.empty()) cfg.train.tasks = {{OpDescriptor{}, 1.0}};
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config '" + path + "': cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["precision"] = cfg.precision;
  j["data"] = {{"train_images", cfg.data.train_images},
               {"val_images", cfg.data.val_images},
               {"patch_size", cfg.data.patch_size},
               {"patch_stride", cfg.data.patch_stride},
               {"val_patches", cfg.data.val_patches}};
  j["model"] = json::parse(model_config_to_json(cfg.model));
  json tasks = json::array();
  for (const auto& t : cfg.train.tasks) {
    json tj = op_descriptor_to_json(t.op);
    tj["prob"] = t.prob;
    tasks.push_back(tj);
  }
  j["train"] = {{"steps", cfg.train.steps},
                {"loss_weights", cfg.train.loss_weights},
                {"tasks", tasks},
                {"sigma", cfg.train.sigmas},
                {"quantize", cfg.train.quantize},
                {"batch_size", cfg.train.batch_size},
                {"updates", cfg.train.updates},
                {"learning_rate", cfg.train.adam.lr},
                {"clip_norm", cfg.train.adam.clip_norm},
                {"val_every", cfg.train.val_every}};
  return j.dump(2);
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  return model_from_json(json::parse(text));
}

std::string config_hash(const ModelConfig& cfg) {
  const std::string s = model_config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

TaskSpec parse_task_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  TaskSpec t;
  t.op.kind = op_kind_from(head);
  bool saw_factor = false;

  std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  std::istringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    const std::string key = item.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : item.substr(eq + 1);
    auto need_val = [&] {
      if (val.empty()) throw std::invalid_argument("task spec '" + spec + "': '" + key + "' needs a value");
      return val;
    };
    if (key == "sigma")
      t.sigma = std::stod(need_val());
    else if (key == "quantize")
      t.quantize = true;
    else if (key == "p")
      t.op.p = std::stod(need_val());
    else if (key == "m")
      t.op.m = std::stoi(need_val());
    else if (key == "seed")
      t.op.seed = std::stoull(need_val());
    else if (key == "factor") {
      t.op.factor = std::stoi(need_val());
      saw_factor = true;
    } else
      throw std::invalid_argument("task spec '" + spec + "': unknown field '" + key + "'");
  }
  if (t.op.kind == OpKind::bicubic && !saw_factor)
    throw std::invalid_argument("task spec '" + spec + "': sr needs factor=<2|3|4>");
  if (t.quantize && t.op.kind != OpKind::identity)
    throw std::invalid_argument("task spec '" + spec + "': quantize is only valid for denoise");
  return t;
}

std::string task_spec_to_string(const TaskSpec& t) {
  std::ostringstream os;
  switch (t.op.kind) {
    case OpKind::identity:
      os << "denoise:sigma=" << t.sigma;
      if (t.quantize) os << ",quantize";
      return os.str();
    case OpKind::mask:
      os << "inpaint:p=" << t.op.p << ",seed=" << t.op.seed;
      break;
    case OpKind::gaussian:
      os << "gaussian:p=" << t.op.p << ",seed=" << t.op.seed;
      break;
    case OpKind::bernoulli:
      os << "bernoulli:p=" << t.op.p << ",seed=" << t.op.seed;
      break;
    case OpKind::fourier:
      os << "fourier:p=" << t.op.p << ",seed=" << t.op.seed;
      break;
    case OpKind::bicubic:
      os << "sr:factor=" << t.op.factor << ",sigma=" << t.sigma;
      return os.str();
  }
  if (t.sigma > 0.0) os << ",sigma=" << t.sigma;
  return os.str();
}

}  // namespace rim
