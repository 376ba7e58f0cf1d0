#include <json.hpp>

#include "mdpet/cli.hpp"
#include "mdpet/io.hpp"

namespace mdpet::cli {
namespace {

using json = nlohmann::ordered_json;

template <typename T>
void take(const json& j, const char* key, T& field) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    field = it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["data"] = data;
  j["out"] = out;
  j["pretrained"] = pretrained;
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["pretrain_epochs"] = pretrain_epochs;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["beta"] = beta;
  j["base_channels"] = base_channels;
  j["shuffle"] = shuffle;
  j["detach_residual_target"] = detach_residual_target;
  j["freeze_encoder"] = freeze_encoder;
  j["use_refinenet"] = use_refinenet;
  j["lambda"] = lambda ? json(*lambda) : json(nullptr);
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");

  RunConfig c;
  const json reference = json::parse(c.to_json());
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  take(j, "data", c.data);
  take(j, "out", c.out);
  take(j, "pretrained", c.pretrained);
  take(j, "seed", c.seed);
  take(j, "seeds", c.seeds);
  take(j, "pretrain_epochs", c.pretrain_epochs);
  take(j, "epochs", c.epochs);
  take(j, "lr", c.lr);
  take(j, "batch_size", c.batch_size);
  take(j, "beta", c.beta);
  take(j, "base_channels", c.base_channels);
  take(j, "shuffle", c.shuffle);
  take(j, "detach_residual_target", c.detach_residual_target);
  take(j, "freeze_encoder", c.freeze_encoder);
  take(j, "use_refinenet", c.use_refinenet);
  if (const auto it = j.find("lambda"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw ValidationError("config key 'lambda' must be a number or null");
    c.lambda = it->get<double>();
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  try {
    return from_json(io::read_text(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

train::TrainConfig RunConfig::pretrain_config() const {
  train::TrainConfig t;
  t.epochs = pretrain_epochs;
  t.lr = lr;
  t.batch_size = batch_size;
  t.beta = beta;
  t.seed = seed;
  t.shuffle = shuffle;
  t.detach_residual_target = detach_residual_target;
  t.base_channels = base_channels;
  t.lambda_override = lambda;
  return t;
}

train::TrainConfig RunConfig::train_config() const {
  auto t = pretrain_config();
  t.epochs = epochs;
  t.lambda_override.reset();
  t.freeze_encoder = freeze_encoder;
  t.use_refinenet = use_refinenet;
  return t;
}

void RunConfig::validate() const {
  pretrain_config().validate();
  train_config().validate();
  if (seeds.empty()) throw ValidationError("seeds must not be empty");
}

}  // namespace mdpet::cli
