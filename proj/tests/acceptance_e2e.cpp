#include "acceptance_e2e.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <vector>

#include "bcr/cli/commands.hpp"
#include "bcr/cli/run_config.hpp"

namespace fs = std::filesystem;

namespace bcr::acceptance {

namespace {

constexpr int kSeeds[] = {1, 2, 3};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

double accuracy_within(const std::vector<eval::Outcome>& outcomes, long budget) {
  if (outcomes.empty()) return 0.0;
  long hits = 0;
  for (const auto& o : outcomes) hits += o.correct_within(budget);
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double acc_of(const cli::EvalSummary& s, const std::string& mode, int c) {
  for (const auto& r : s.rows) {
    if (r.mode == mode && r.ratio_c == c) return r.acc_c;
  }
  throw std::runtime_error("no evaluation row for " + mode + " c=" + std::to_string(c));
}

}  // namespace

EndToEnd::EndToEnd(fs::path work, int jobs, std::ostream& log) : work_(std::move(work)), jobs_(jobs), log_(log) {}

const SeedResult& EndToEnd::run(int seed) {
  if (auto it = results_.find(seed); it != results_.end()) return it->second;

  auto config = cli::load_run_config(fs::path(BCR_SOURCE_DIR) / "configs" / "toy_stargraph.yaml");
  config.seed = static_cast<std::uint64_t>(seed);
  config.jobs = jobs_;
  // Every seed starts from the same warm-start model.
  const fs::path base_root = work_ / "shared";
  const fs::path root = work_ / ("seed_" + std::to_string(seed));
  fs::create_directories(root);
  if (!fs::exists(root / "base")) {
    cli::ensure_base(config, cli::RunPaths{base_root}, log_);
    fs::create_directory_symlink(fs::absolute(base_root / "base"), root / "base");
  }
  cli::RunPaths paths{root};

  SeedResult r;
  const auto trained = cli::train(config, paths, {"joint", {}}, log_);
  r.target_step = trained.target_step;
  r.rolling_accuracy = trained.final_rolling_accuracy;

  cli::EvalRequest fl;
  fl.modes = {"none", "br"};
  fl.ratios = {2};
  fl.kind = eval::Budget::fixed_length;
  const auto fixed_length = cli::evaluate(config, paths, fl, log_);
  r.teacher_fixed_length = acc_of(fixed_length, "none", 0);
  r.student_fixed_length = acc_of(fixed_length, "br", 2);

  cli::EvalRequest fc;
  fc.modes = {"none", "br", "streaming"};
  fc.ratios = {2, 8};
  fc.kind = eval::Budget::fixed_cache;
  const auto fixed_cache = cli::evaluate(config, paths, fc, log_);
  r.streaming_c8 = acc_of(fixed_cache, "streaming", 8);
  r.breadcrumbs_c8 = acc_of(fixed_cache, "br", 8);

  // The teacher's typical completion cache: median peak entries over the
  // episodes that finished.
  const auto teacher = eval::read_outcomes_jsonl(fixed_cache.dir / "outcomes_none_c0.jsonl");
  const auto student = eval::read_outcomes_jsonl(fixed_cache.dir / "outcomes_br_c2.jsonl");
  std::vector<long> peaks;
  for (const auto& o : teacher) {
    if (o.stopped) peaks.push_back(o.peak_entries);
  }
  if (!peaks.empty()) {
    std::nth_element(peaks.begin(), peaks.begin() + static_cast<long>(peaks.size() / 2), peaks.end());
    r.half_cache = peaks[peaks.size() / 2] / 2;
  }
  r.teacher_half_cache = accuracy_within(teacher, r.half_cache);
  r.student_half_cache = accuracy_within(student, r.half_cache);

  log_ << "seed " << seed << ": target step " << r.target_step << ", rolling " << fmt(r.rolling_accuracy)
       << ", fixed length teacher " << fmt(r.teacher_fixed_length) << " student c2 " << fmt(r.student_fixed_length)
       << ", cache " << r.half_cache << " teacher " << fmt(r.teacher_half_cache) << " student c2 "
       << fmt(r.student_half_cache) << ", c8 streaming " << fmt(r.streaming_c8) << " breadcrumbs "
       << fmt(r.breadcrumbs_c8) << std::endl;
  return results_.emplace(seed, r).first->second;
}

E2eVerdict EndToEnd::teacher_and_student() {
  int passed = 0;
  std::string detail;
  for (int seed : kSeeds) {
    const auto& r = run(seed);
    const bool teacher_ok = r.target_step >= 0;
    const bool length_ok = r.student_fixed_length >= 0.6 * r.teacher_fixed_length;
    const bool cache_ok = r.student_half_cache >= r.teacher_half_cache;
    passed += teacher_ok && length_ok && cache_ok;
    detail += "; seed " + std::to_string(seed) + ": teacher " +
              (teacher_ok ? "hit 0.9 at step " + std::to_string(r.target_step) : "missed 0.9") + ", length " +
              fmt(r.student_fixed_length) + "/" + fmt(r.teacher_fixed_length) + ", cache " +
              std::to_string(r.half_cache) + " " + fmt(r.student_half_cache) + "/" + fmt(r.teacher_half_cache);
  }
  return {passed >= 2, std::to_string(passed) + "/3 seeds" + detail};
}

E2eVerdict EndToEnd::streaming_vs_breadcrumbs() {
  int passed = 0;
  std::string detail;
  for (int seed : kSeeds) {
    const auto& r = run(seed);
    passed += r.streaming_c8 < r.breadcrumbs_c8;
    detail += "; seed " + std::to_string(seed) + ": streaming " + fmt(r.streaming_c8) + " vs breadcrumbs " +
              fmt(r.breadcrumbs_c8);
  }
  return {passed >= 2, std::to_string(passed) + "/3 seeds" + detail};
}

}  // namespace bcr::acceptance
