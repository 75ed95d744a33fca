#include "volnet/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "volnet/checkpoint.hpp"
#include "volnet/check_registry.hpp"
#include "volnet/phantom.hpp"

namespace volnet {

namespace {

// ordered (no shuffle) batch assembly for eval/predict
Batch assemble(const Manifest& manifest, const std::vector<ManifestRow>& rows, index_t begin, index_t end,
               const PipelineDims& dims, ClampRange clamp, int workers) {
  const index_t n = end - begin;
  Batch out;
  out.volumes = Tensor<float>(Shape{n, 1, dims.depth, dims.height, dims.width});
  out.labels = Tensor<float>(Shape{n});
  out.ids.resize(static_cast<std::size_t>(n));
  const index_t voxels = dims.depth * dims.height * dims.width;
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto prepare = [&](index_t lo, index_t hi) {
    for (index_t r = lo; r < hi; ++r) {
      try {
        const ManifestRow& row = rows[static_cast<std::size_t>(begin + r)];
        VolumeRecord rec = load_record(manifest, row);
        Tensor<float> v = preprocess(rec.voxels, dims, clamp);
        std::memcpy(out.volumes.mutable_data() + r * voxels, v.data(),
                    static_cast<std::size_t>(voxels) * sizeof(float));
        out.labels.mutable_data()[r] = static_cast<float>(row.label);
        out.ids[static_cast<std::size_t>(r)] = row.id;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const index_t nthreads = std::clamp<index_t>(workers, 1, n);
  if (nthreads <= 1) {
    prepare(0, n);
  } else {
    std::vector<std::thread> pool;
    const index_t chunk = (n + nthreads - 1) / nthreads;
    for (index_t t = 0; t < nthreads; ++t) {
      const index_t lo = t * chunk, hi = std::min(lo + chunk, n);
      if (lo < hi) pool.emplace_back(prepare, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

MetricsReport evaluate(Model<float>& model, const Manifest& manifest, const std::vector<ManifestRow>& rows,
                       const PipelineDims& dims, ClampRange clamp, double threshold, index_t batch_size,
                       int workers) {
  if (rows.empty()) throw DataError("evaluation over an empty record set");
  Tensor<float> probs(Shape{static_cast<index_t>(rows.size())});
  std::vector<int> labels(rows.size());
  const index_t n = static_cast<index_t>(rows.size());
  for (index_t begin = 0; begin < n; begin += batch_size) {
    const index_t end = std::min(begin + batch_size, n);
    Batch batch = assemble(manifest, rows, begin, end, dims, clamp, workers);
    Tensor<float> p = model.predict(batch.volumes);
    for (index_t i = 0; i < p.size(); ++i) {
      probs.mutable_data()[begin + i] = p.at_flat(i);
      labels[static_cast<std::size_t>(begin + i)] = batch.labels.at_flat(i) >= 0.5f ? 1 : 0;
    }
  }
  return macro_f1(confusion(probs, labels, threshold), threshold);
}

nlohmann::json report_to_json(const MetricsReport& r) { return nlohmann::json::parse(report_json(r)); }

Checkpoint snapshot(const RunConfig& cfg, Model<float>& model, const AdamState<float>& opt, index_t epoch,
                    double best_f1) {
  Checkpoint ckpt;
  pack_model(ckpt, model);
  pack_adam(ckpt, opt);
  ckpt.put_meta("epoch", static_cast<double>(epoch));
  ckpt.put_meta("best_macro_f1", best_f1);
  ckpt.put_meta("variant", cfg.variant == Variant::with_mha ? 1 : 0);
  ckpt.put_meta("tiny", cfg.tiny ? 1 : 0);
  ckpt.put_meta("seed", static_cast<double>(cfg.seed));
  return ckpt;
}

// checkpoint meta decides the architecture; the config only supplies it for
// checkpoints predating the meta fields
Model<float> model_from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg) {
  RunConfig like = cfg;
  like.variant = ckpt.meta_or("variant", cfg.variant == Variant::with_mha ? 1 : 0) >= 0.5 ? Variant::with_mha
                                                                                          : Variant::plain;
  like.tiny = ckpt.meta_or("tiny", cfg.tiny ? 1 : 0) >= 0.5;
  Model<float> model = build_model<float>(like.model_config(), 0);
  unpack_model(model, ckpt);
  return model;
}

PipelineDims dims_for_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg) {
  const bool tiny = ckpt.meta_or("tiny", cfg.tiny ? 1 : 0) >= 0.5;
  return tiny ? PipelineDims::tiny() : PipelineDims::canonical();
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const PipelineDims dims = cfg.pipeline_dims();
  const ClampRange clamp = cfg.clamp();
  const Manifest manifest = read_manifest(cfg.manifest);
  const std::vector<ManifestRow> train_rows = manifest.split("train");
  const std::vector<ManifestRow> val_rows = manifest.split("val");
  if (train_rows.empty()) throw DataError(cfg.manifest + ": no records with split=train");

  Model<float> model = build_model<float>(cfg.model_config(), cfg.seed);
  ParamList<float> params = trainable_params(model);
  AdamState<float> opt;
  index_t start_epoch = 0;
  double best_f1 = -1;

  if (!cfg.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(cfg.resume);
    const bool ck_mha = ckpt.meta_or("variant", 0) >= 0.5;
    const bool ck_tiny = ckpt.meta_or("tiny", 0) >= 0.5;
    if (ck_mha != (cfg.variant == Variant::with_mha) || ck_tiny != cfg.tiny) {
      throw DataError(cfg.resume + ": checkpoint architecture does not match the config");
    }
    unpack_model(model, ckpt);
    unpack_adam(opt, ckpt);
    start_epoch = static_cast<index_t>(ckpt.meta_or("epoch", -1)) + 1;
    best_f1 = ckpt.meta_or("best_macro_f1", -1);
  }

  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "trainlog.jsonl", cfg.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError((out_dir / "trainlog.jsonl").string() + ": cannot open train log");

  TrainResult result;
  result.best_checkpoint = out_dir / "best.vnck";
  result.last_checkpoint = out_dir / "last.vnck";

  auto detach_params = [&params] {
    for (auto& [name, p] : params) p->detach();
  };

  bool stop = false;
  index_t epoch = start_epoch;
  for (; epoch < cfg.hp.epochs && !stop; ++epoch) {
    BatchStream stream(manifest, train_rows, cfg.hp.batch_size, cfg.seed, epoch, dims, clamp, cfg.workers);
    for (index_t step = 0; step < stream.num_batches(); ++step) {
      const Batch batch = stream.batch(step);
      Tape<float> tape;
      for (auto& [name, p] : params) tape.watch(*p);
      Tensor<float> logits = model.forward(batch.volumes, Mode::train);
      Tensor<float> loss = bce_with_logits(logits, batch.labels, static_cast<float>(cfg.pos_weight));
      const double loss_value = loss.at_flat(0);
      if (!std::isfinite(loss_value)) {
        detach_params();
        throw NumericError("non-finite training loss " + std::to_string(loss_value) + " at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(step));
      }
      GradMap<float> grads = tape.backward(loss);
      adam_step(params, grads, opt, cfg.hp);
      detach_params();
      log << nlohmann::json{{"epoch", epoch}, {"step", step}, {"loss", loss_value}} << "\n";
    }
    if (!val_rows.empty()) {
      const MetricsReport report =
          evaluate(model, manifest, val_rows, dims, clamp, cfg.threshold, cfg.hp.batch_size, cfg.workers);
      log << nlohmann::json{{"epoch", epoch}, {"val", report_to_json(report)}} << "\n";
      if (report.macro_f1 > best_f1) {
        best_f1 = report.macro_f1;
        save_checkpoint(result.best_checkpoint, snapshot(cfg, model, opt, epoch, best_f1));
      }
      if (cfg.early_stop_macro_f1 <= 1.0 && report.macro_f1 >= cfg.early_stop_macro_f1) stop = true;
    }
    if ((epoch + 1) % cfg.checkpoint_interval == 0 || epoch + 1 == cfg.hp.epochs || stop) {
      save_checkpoint(result.last_checkpoint, snapshot(cfg, model, opt, epoch, best_f1));
    }
    log.flush();
  }
  if (val_rows.empty()) {
    // no validation: the final state doubles as the best checkpoint
    save_checkpoint(result.best_checkpoint, snapshot(cfg, model, opt, epoch - 1, best_f1));
  }
  result.best_macro_f1 = best_f1;
  result.epochs_run = epoch - start_epoch;
  return result;
}

MetricsReport cmd_eval(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const std::string path = cfg.checkpoint.empty() ? (std::filesystem::path(cfg.out_dir) / "best.vnck").string()
                                                  : cfg.checkpoint;
  const Checkpoint ckpt = load_checkpoint(path);
  Model<float> model = model_from_checkpoint(ckpt, cfg);
  const PipelineDims dims = dims_for_checkpoint(ckpt, cfg);
  const Manifest manifest = read_manifest(cfg.manifest);
  const std::vector<ManifestRow> rows = manifest.split(cfg.eval_split);
  if (rows.empty()) throw DataError(cfg.manifest + ": no records with split=" + cfg.eval_split);
  const MetricsReport report =
      evaluate(model, manifest, rows, dims, cfg.clamp(), cfg.threshold, cfg.hp.batch_size, cfg.workers);
  out << report_text(report);
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream json_out(std::filesystem::path(cfg.out_dir) / "report.json", std::ios::trunc);
  json_out << report_json(report) << "\n";
  return report;
}

void cmd_predict(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw ConfigError("predict requires a checkpoint= path");
  if (cfg.input.empty()) throw ConfigError("predict requires an input= path (.volf file or manifest)");
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  Model<float> model = model_from_checkpoint(ckpt, cfg);
  const PipelineDims dims = dims_for_checkpoint(ckpt, cfg);
  const ClampRange clamp = cfg.clamp();

  auto emit = [&](const std::string& id, float prob) {
    out << id << " " << prob << " " << (prob >= static_cast<float>(cfg.threshold) ? 1 : 0) << "\n";
  };

  const std::filesystem::path input(cfg.input);
  if (input.extension() == ".volf") {
    Tensor<float> raw = read_volume(input);
    Tensor<float> v = preprocess(raw, dims, clamp);
    Tensor<float> batch = v.viewed_as(Shape{1, 1, dims.depth, dims.height, dims.width});
    emit(input.stem().string(), model.predict(batch).at_flat(0));
    return;
  }
  const Manifest manifest = read_manifest(input);
  if (manifest.rows.empty()) throw DataError(cfg.input + ": manifest has no records");
  const index_t n = static_cast<index_t>(manifest.rows.size());
  for (index_t begin = 0; begin < n; begin += cfg.hp.batch_size) {
    const index_t end = std::min(begin + cfg.hp.batch_size, n);
    Batch batch = assemble(manifest, manifest.rows, begin, end, dims, clamp, cfg.workers);
    Tensor<float> probs = model.predict(batch.volumes);
    for (index_t i = 0; i < probs.size(); ++i) emit(batch.ids[static_cast<std::size_t>(i)], probs.at_flat(i));
  }
}

void cmd_synth(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const PhantomSpec spec = cfg.phantom_spec();
  const std::vector<ManifestRow> rows = generate_phantoms(spec, cfg.synth_dir);
  out << "wrote " << rows.size() << " volumes and manifest.csv to " << cfg.synth_dir << "\n";
}

void cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Manifest manifest = read_manifest(cfg.manifest);
  if (manifest.rows.empty()) throw DataError(cfg.manifest + ": manifest has no records");
  const PipelineDims dims = cfg.pipeline_dims();
  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestRow> rows = manifest.rows;
  for (auto& row : rows) {
    const VolumeRecord rec = load_record(manifest, row);
    const Tensor<float> v = preprocess(rec.voxels, dims, cfg.clamp());
    row.path = row.id + ".volf";
    write_volume(out_dir / row.path, v);
  }
  write_manifest(out_dir / "manifest.csv", rows);
  out << "wrote " << rows.size() << " preprocessed volumes to " << cfg.out_dir << "\n";
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  std::vector<NamedCheck> checks = gradient_checks(cfg.seed);
  const double tol = 1e-3;
  int failures = 0;
  index_t ran = 0;
  out << std::left << std::setw(22) << "check" << std::setw(14) << "max_rel_err" << std::setw(9) << "coords"
      << std::setw(9) << "kinks"
      << "status\n";
  for (const auto& check : checks) {
    if (cfg.scope != "all" && check.name.find(cfg.scope) == std::string::npos) continue;
    ++ran;
    const GradCheckResult r = check.run();
    const bool ok = r.passed(tol);
    if (!ok) ++failures;
    out << std::left << std::setw(22) << check.name << std::setw(14) << std::scientific << std::setprecision(2)
        << r.max_rel_err << std::defaultfloat << std::setw(9) << r.checked << std::setw(9) << r.skipped_kinks
        << (ok ? "PASS" : "FAIL") << "\n";
  }
  if (ran == 0) throw ConfigError("gradcheck scope '" + cfg.scope + "' matches no registered check");
  out << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << "\n";
  return failures == 0 ? 0 : 1;
}

void cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  struct Row {
    std::string label;
    MetricsReport report;
  };
  std::vector<Row> rows;
  for (const Variant variant : {Variant::plain, Variant::with_mha}) {
    RunConfig sub = cfg;
    sub.variant = variant;
    sub.out_dir = (std::filesystem::path(cfg.out_dir) / variant_name(variant)).string();
    const TrainResult trained = cmd_train(sub);
    RunConfig eval_cfg = sub;
    eval_cfg.checkpoint = trained.best_checkpoint.string();
    eval_cfg.eval_split = "val";
    std::ostringstream sink;
    const MetricsReport report = cmd_eval(eval_cfg, sink);
    rows.push_back({variant == Variant::plain ? "3D ResNet-18" : "3D ResNet-18 + MHA", report});
  }
  out << std::left << std::setw(20) << "Model" << std::right << std::setw(10) << "Recall" << std::setw(12)
      << "Precision" << std::setw(12) << "Macro F1" << "\n";
  nlohmann::json table = nlohmann::json::array();
  for (const Row& row : rows) {
    out << std::left << std::setw(20) << row.label << std::right << std::fixed << std::setprecision(4)
        << std::setw(10) << row.report.recall_pos << std::setw(12) << row.report.precision_pos << std::setw(12)
        << row.report.macro_f1 << std::defaultfloat << "\n";
    table.push_back({{"model", row.label},
                     {"recall", row.report.recall_pos},
                     {"precision", row.report.precision_pos},
                     {"macro_f1", row.report.macro_f1}});
  }
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream json_out(std::filesystem::path(cfg.out_dir) / "ablation.json", std::ios::trunc);
  json_out << table.dump() << "\n";
}

}  // namespace volnet
