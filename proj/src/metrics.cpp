#include "spamdet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "spamdet/errors.hpp"

namespace spamdet {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassRow make_row(const ConfusionMatrix& cm) {
  ClassRow row;
  row.label = cm.positive_class;
  row.scores = {precision(cm), recall(cm), f1(cm)};
  row.support = cm.tp + cm.fn;
  row.degenerate = cm.tp + cm.fp == 0 || cm.tp + cm.fn == 0;
  return row;
}

ConfusionMatrix flip(const ConfusionMatrix& cm) {
  ConfusionMatrix other;
  other.positive_class = cm.positive_class == Label::spam ? Label::ham : Label::spam;
  other.tp = cm.tn;
  other.tn = cm.tp;
  other.fp = cm.fn;
  other.fn = cm.fp;
  return other;
}

nlohmann::ordered_json scores_json(const Scores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

}  // namespace

ConfusionMatrix confusion(std::span<const LabelPair> pairs, Label positive_class) {
  if (pairs.empty()) throw InputError("confusion: no prediction pairs");
  ConfusionMatrix cm;
  cm.positive_class = positive_class;
  for (const auto& [gold, pred] : pairs) {
    const bool g = gold == positive_class;
    const bool p = pred == positive_class;
    if (g && p) ++cm.tp;
    else if (!g && p) ++cm.fp;
    else if (g && !p) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

double precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
double recall(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }

double f1(const ConfusionMatrix& cm) {
  const double p = precision(cm), r = recall(cm);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

ClassReport report(const ConfusionMatrix& cm) {
  const ConfusionMatrix spam = cm.positive_class == Label::spam ? cm : flip(cm);
  const ConfusionMatrix ham = flip(spam);
  ClassReport r;
  r.ham = make_row(ham);
  r.spam = make_row(spam);
  r.total = spam.total();
  r.accuracy = ratio(spam.tp + spam.tn, r.total);

  r.macro_avg.precision = (r.ham.scores.precision + r.spam.scores.precision) / 2.0;
  r.macro_avg.recall = (r.ham.scores.recall + r.spam.scores.recall) / 2.0;
  r.macro_avg.f1 = (r.ham.scores.f1 + r.spam.scores.f1) / 2.0;

  const double n = static_cast<double>(r.total);
  const double wh = static_cast<double>(r.ham.support) / n;
  const double ws = static_cast<double>(r.spam.support) / n;
  r.weighted_avg.precision = wh * r.ham.scores.precision + ws * r.spam.scores.precision;
  r.weighted_avg.recall = wh * r.ham.scores.recall + ws * r.spam.scores.recall;
  r.weighted_avg.f1 = wh * r.ham.scores.f1 + ws * r.spam.scores.f1;
  return r;
}

ClassReport report(std::span<const LabelPair> pairs) {
  return report(confusion(pairs, Label::spam));
}

std::vector<LabelPair> pairs_from_counts(std::size_t ham_correct, std::size_t ham_total,
                                         std::size_t spam_correct, std::size_t spam_total) {
  if (ham_correct > ham_total || spam_correct > spam_total)
    throw InputError("correct count exceeds class total");
  std::vector<LabelPair> pairs;
  pairs.insert(pairs.end(), ham_correct, {Label::ham, Label::ham});
  pairs.insert(pairs.end(), ham_total - ham_correct, {Label::ham, Label::spam});
  pairs.insert(pairs.end(), spam_correct, {Label::spam, Label::spam});
  pairs.insert(pairs.end(), spam_total - spam_correct, {Label::spam, Label::ham});
  return pairs;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The small nudge keeps values like 0.98625 (stored as 0.98624999...) on the
  // side a reader would expect.
  return std::floor(value * scale + 0.5 + 1e-9) / scale;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_up(value, decimals));
  return buf;
}

nlohmann::ordered_json to_json(const ClassReport& r) {
  auto row = [](const ClassRow& c) {
    auto j = scores_json(c.scores);
    j["support"] = c.support;
    j["degenerate"] = c.degenerate;
    return j;
  };
  nlohmann::ordered_json j;
  j["ham"] = row(r.ham);
  j["spam"] = row(r.spam);
  j["macro_avg"] = scores_json(r.macro_avg);
  j["macro_avg"]["support"] = r.total;
  j["weighted_avg"] = scores_json(r.weighted_avg);
  j["weighted_avg"]["support"] = r.total;
  j["accuracy"] = r.accuracy;
  return j;
}

std::string to_table(const ClassReport& r) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9s\n", "", "precision", "recall",
                "f1-score", "support");
  out << line;
  auto emit = [&](const char* name, const Scores& s, std::size_t support) {
    std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9zu\n", name,
                  format_fixed(s.precision).c_str(), format_fixed(s.recall).c_str(),
                  format_fixed(s.f1).c_str(), support);
    out << line;
  };
  emit("ham", r.ham.scores, r.ham.support);
  emit("spam", r.spam.scores, r.spam.support);
  out << '\n';
  std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9zu\n", "accuracy", "", "",
                format_fixed(r.accuracy).c_str(), r.total);
  out << line;
  emit("macro avg", r.macro_avg, r.total);
  emit("weighted avg", r.weighted_avg, r.total);
  return out.str();
}

}  // namespace spamdet
