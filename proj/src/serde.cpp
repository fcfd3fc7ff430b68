#include "bt/serde.hpp"

#include "bt/errors.hpp"

namespace bt::serde {

namespace {

using nlohmann::json;

// Pulls typed fields out of an object and rejects anything unexpected.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;  // keep default
    try {
      out = it->get<V>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  void get_string_enum(const char* key, const std::vector<std::string>& allowed,
                       std::string& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw ConfigError(path_ + "." + key + ": expected a string");
    const std::string v = it->get<std::string>();
    for (const auto& a : allowed)
      if (v == a) {
        out = v;
        return;
      }
    throw ConfigError(path_ + "." + key + ": unknown value '" + v + "'");
  }

  void mark(const char* key) { seen_.push_back(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const auto& s : seen_)
        if (key == s) {
          known = true;
          break;
        }
      if (!known) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace

json to_json(const smr::SmrConfig& cfg) {
  return {{"high_bits", cfg.high_bits}, {"low_bits", cfg.low_bits}};
}

smr::SmrConfig smr_from_json(const json& j, const std::string& path) {
  smr::SmrConfig cfg;
  FieldReader r(j, path);
  r.get("high_bits", cfg.high_bits);
  r.get("low_bits", cfg.low_bits);
  r.finish();
  return cfg;
}

json to_json(const TextEncoderSpec& spec) {
  return {{"mode", spec.mode == TextEncoderSpec::Mode::Hashed ? "hashed"
                                                              : "table_file"},
          {"vocab_buckets", spec.vocab_buckets},
          {"text_dim", spec.text_dim},
          {"table_path", spec.table_path},
          {"lowercase", spec.lowercase}};
}

TextEncoderSpec text_encoder_from_json(const json& j, const std::string& path) {
  TextEncoderSpec spec;
  FieldReader r(j, path);
  std::string mode = "hashed";
  r.get_string_enum("mode", {"hashed", "table_file"}, mode);
  spec.mode = mode == "hashed" ? TextEncoderSpec::Mode::Hashed
                               : TextEncoderSpec::Mode::TableFile;
  r.get("vocab_buckets", spec.vocab_buckets);
  r.get("text_dim", spec.text_dim);
  r.get("table_path", spec.table_path);
  r.get("lowercase", spec.lowercase);
  r.finish();
  return spec;
}

json to_json(const ModelConfig& cfg) {
  return {{"embed_dim", cfg.embed_dim},
          {"n_blocks", cfg.n_blocks},
          {"n_heads", cfg.n_heads},
          {"basis_len", cfg.basis_len},
          {"comp_ratio", cfg.comp_ratio},
          {"n_ctx_layers", cfg.n_ctx_layers},
          {"dropout", cfg.dropout},
          {"mlp_hidden_mult", cfg.mlp_hidden_mult},
          {"smr", to_json(cfg.smr)},
          {"head_mode",
           cfg.head_mode == HeadMode::SmrLogits ? "smr_logits" : "scalar"}};
}

ModelConfig model_from_json(const json& j, const std::string& path) {
  ModelConfig cfg;
  FieldReader r(j, path);
  r.get("embed_dim", cfg.embed_dim);
  r.get("n_blocks", cfg.n_blocks);
  r.get("n_heads", cfg.n_heads);
  r.get("basis_len", cfg.basis_len);
  r.get("comp_ratio", cfg.comp_ratio);
  r.get("n_ctx_layers", cfg.n_ctx_layers);
  r.get("dropout", cfg.dropout);
  r.get("mlp_hidden_mult", cfg.mlp_hidden_mult);
  std::string head = "smr_logits";
  r.get_string_enum("head_mode", {"smr_logits", "scalar"}, head);
  cfg.head_mode = head == "scalar" ? HeadMode::Scalar : HeadMode::SmrLogits;
  r.mark("smr");
  if (j.contains("smr")) cfg.smr = smr_from_json(j.at("smr"), path + ".smr");
  r.finish();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"weight_decay", cfg.weight_decay},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps_opt", cfg.eps_opt},
          {"max_grad_norm", cfg.max_grad_norm},
          {"lr_decay_mult", cfg.lr_decay_mult},
          {"gamma", cfg.gamma},
          {"eps_g", cfg.eps_g},
          {"batch_size", cfg.batch_size},
          {"n_strides", cfg.n_strides},
          {"stride_size", cfg.stride_size},
          {"seed", cfg.seed},
          {"loss_mode",
           cfg.loss_mode == LossMode::BceSmr ? "bce_smr" : "mse_scalar"},
          {"reweigh", cfg.reweigh}};
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  TrainConfig cfg;
  FieldReader r(j, path);
  r.get("learning_rate", cfg.learning_rate);
  r.get("weight_decay", cfg.weight_decay);
  r.get("beta1", cfg.beta1);
  r.get("beta2", cfg.beta2);
  r.get("eps_opt", cfg.eps_opt);
  r.get("max_grad_norm", cfg.max_grad_norm);
  r.get("lr_decay_mult", cfg.lr_decay_mult);
  r.get("gamma", cfg.gamma);
  r.get("eps_g", cfg.eps_g);
  r.get("batch_size", cfg.batch_size);
  r.get("n_strides", cfg.n_strides);
  r.get("stride_size", cfg.stride_size);
  r.get("seed", cfg.seed);
  std::string loss = "bce_smr";
  r.get_string_enum("loss_mode", {"bce_smr", "mse_scalar"}, loss);
  cfg.loss_mode = loss == "mse_scalar" ? LossMode::MseScalar : LossMode::BceSmr;
  r.get("reweigh", cfg.reweigh);
  r.finish();
  return cfg;
}

}  // namespace bt::serde
