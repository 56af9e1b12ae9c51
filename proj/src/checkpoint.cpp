#include "pat/checkpoint.hpp"

#include <algorithm>

#include "pat/error.hpp"

namespace pat {

namespace {

Tensor string_tensor(const std::string& text) {
  std::vector<double> values(text.begin(), text.end());
  return Tensor::from_vector({text.size()}, std::move(values));
}

std::string tensor_string(const Tensor& t) {
  std::string out;
  for (double v : t.values()) out.push_back(static_cast<char>(static_cast<int>(v)));
  return out;
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw IntegrityError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                         ", model expects " + shape_str(dst.shape()));
  }
  auto values = dst.leaf_values();
  std::copy(src.values().begin(), src.values().end(), values.begin());
}

}  // namespace

TensorList checkpoint_tensors(const PatModel& model, const AdamW* optimizer, std::size_t step) {
  TensorList out;
  const auto& items = model.params().items();
  for (const auto& [name, p] : items) {
    out.push_back({"param/" + name, DType::F64, Tensor::from_vector(p.shape(), p.to_vector())});
  }
  if (optimizer) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& shape = items[i].second.shape();
      out.push_back({"adam_m/" + items[i].first, DType::F64,
                     Tensor::from_vector(shape, optimizer->first_moments()[i])});
      out.push_back({"adam_v/" + items[i].first, DType::F64,
                     Tensor::from_vector(shape, optimizer->second_moments()[i])});
    }
  }
  out.push_back({"meta/step", DType::F64, Tensor::from_vector({1}, {static_cast<double>(step)})});
  out.push_back({"meta/param_count", DType::I32,
                 Tensor::from_vector({1}, {static_cast<double>(items.size())})});
  out.push_back({"meta/config", DType::I32, string_tensor(to_json_string(model.config(), -1))});
  return out;
}

void save_checkpoint(const std::string& path, const PatModel& model, const AdamW* optimizer,
                     std::size_t step) {
  save_fpt1(path, checkpoint_tensors(model, optimizer, step));
}

RunConfig checkpoint_config(const TensorList& tensors) {
  const auto map = tensor_map(tensors);
  auto it = map.find("meta/config");
  if (it == map.end()) throw IntegrityError("checkpoint lacks meta/config");
  try {
    return parse_config(tensor_string(it->second));
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint configuration is unreadable: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const TensorList& tensors, LoadScope scope) {
  const auto map = tensor_map(tensors);
  LoadedCheckpoint out;
  out.model = std::make_unique<PatModel>(checkpoint_config(tensors));
  auto& items = out.model->params().items();

  std::size_t stored = 0;
  for (const auto& t : tensors) stored += t.name.rfind("param/", 0) == 0 ? 1 : 0;
  if (scope == LoadScope::Full) {
    auto it = map.find("meta/param_count");
    if (it == map.end() || it->second.numel() != 1) {
      throw IntegrityError("checkpoint lacks meta/param_count");
    }
    const auto declared = static_cast<std::size_t>(it->second.value(0));
    if (declared != stored || declared != items.size()) {
      throw IntegrityError("checkpoint declares " + std::to_string(declared) +
                           " parameters, holds " + std::to_string(stored) + ", model has " +
                           std::to_string(items.size()));
    }
  }

  std::vector<std::string> missing;
  for (const auto& [name, p] : items) {
    auto it = map.find("param/" + name);
    if (it == map.end()) {
      if (scope == LoadScope::Full || is_pixel_branch_param(name)) missing.push_back(name);
      continue;
    }
    Tensor dst = p;
    copy_into(dst, it->second, "param/" + name);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 5; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 5) list += ", ...";
    throw IntegrityError("checkpoint is missing " + std::to_string(missing.size()) +
                         " required parameters: " + list);
  }

  if (auto it = map.find("meta/step"); it != map.end() && it->second.numel() == 1) {
    out.step = static_cast<std::size_t>(it->second.value(0));
  }
  const bool has_moments = map.count("adam_m/" + items.front().first) > 0;
  if (has_moments && scope == LoadScope::Full) {
    out.optimizer = std::make_unique<AdamW>(out.model->params(), out.model->config().optim);
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (int which = 0; which < 2; ++which) {
        const std::string key = (which == 0 ? "adam_m/" : "adam_v/") + items[i].first;
        auto it = map.find(key);
        if (it == map.end()) throw IntegrityError("checkpoint is missing '" + key + "'");
        if (it->second.shape() != items[i].second.shape()) {
          throw IntegrityError("checkpoint tensor '" + key + "' has the wrong shape");
        }
        auto& dst = which == 0 ? out.optimizer->first_moments()[i]
                               : out.optimizer->second_moments()[i];
        dst = it->second.to_vector();
      }
    }
    out.optimizer->set_steps(out.step);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path, LoadScope scope) {
  return load_checkpoint(load_fpt1(path), scope);
}

}  // namespace pat
