#include "flowmap/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace flowmap {

bool all_finite(const StateVector& x) { return x.allFinite(); }

std::string describe(const StateVector& x) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i) s += ", ";
    s += format_double(x[i]);
  }
  return s + ")";
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc{}) throw FormatError("cannot format double");
  return {buf, end};
}

double parse_double(std::string_view token) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw FormatError("not a number: '" + std::string(token) + "'");
  }
  return v;
}

bool Box::contains(const StateVector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (!(x[i] >= bounds[i].first && x[i] <= bounds[i].second)) return false;
  }
  return true;
}

StateVector Box::center() const {
  StateVector c(dim());
  for (std::size_t i = 0; i < dim(); ++i) c[i] = 0.5 * (bounds[i].first + bounds[i].second);
  return c;
}

StateVector Box::half_width() const {
  StateVector h(dim());
  for (std::size_t i = 0; i < dim(); ++i) h[i] = 0.5 * (bounds[i].second - bounds[i].first);
  return h;
}

Box Box::scaled(double factor) const {
  Box out;
  const StateVector c = center();
  const StateVector h = half_width();
  for (std::size_t i = 0; i < dim(); ++i) {
    out.bounds.emplace_back(c[i] - factor * h[i], c[i] + factor * h[i]);
  }
  return out;
}

Box Box::bounding(const std::vector<StateVector>& points) {
  Box out;
  if (points.empty()) return out;
  const auto n = points.front().size();
  for (Eigen::Index i = 0; i < n; ++i) {
    double lo = points.front()[i];
    double hi = lo;
    for (const auto& p : points) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    out.bounds.emplace_back(lo, hi);
  }
  return out;
}

SnapshotPairSet::SnapshotPairSet(std::vector<SnapshotPair> pairs, double lag)
    : pairs_(std::move(pairs)), lag_(lag) {
  if (pairs_.empty()) throw std::invalid_argument("snapshot set must contain at least one pair");
  if (!(lag_ > 0.0) || !std::isfinite(lag_)) throw std::invalid_argument("snapshot lag must be positive");
  dim_ = static_cast<std::size_t>(pairs_.front().x1.size());
  if (dim_ == 0) throw DimensionError("snapshot states must have dimension >= 1");
  for (std::size_t j = 0; j < pairs_.size(); ++j) {
    if (static_cast<std::size_t>(pairs_[j].x1.size()) != dim_ ||
        static_cast<std::size_t>(pairs_[j].x2.size()) != dim_) {
      throw DimensionError("snapshot pair " + std::to_string(j) + " does not have dimension " +
                           std::to_string(dim_));
    }
  }
}

Eigen::MatrixXd SnapshotPairSet::initial_matrix() const {
  Eigen::MatrixXd m(dim_, pairs_.size());
  for (std::size_t j = 0; j < pairs_.size(); ++j) m.col(j) = pairs_[j].x1;
  return m;
}

Eigen::MatrixXd SnapshotPairSet::end_matrix() const {
  Eigen::MatrixXd m(dim_, pairs_.size());
  for (std::size_t j = 0; j < pairs_.size(); ++j) m.col(j) = pairs_[j].x2;
  return m;
}

SnapshotPairSet SnapshotPairSet::slice(std::size_t first, std::size_t count) const {
  if (first + count > pairs_.size()) throw std::out_of_range("snapshot slice out of range");
  return SnapshotPairSet({pairs_.begin() + first, pairs_.begin() + first + count}, lag_);
}

bool operator==(const SnapshotPairSet& a, const SnapshotPairSet& b) {
  if (a.dim_ != b.dim_ || a.lag_ != b.lag_ || a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j].x1 != b[j].x1 || a[j].x2 != b[j].x2) return false;
  }
  return true;
}

std::vector<double> Trajectory::component(std::size_t i) const {
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s[static_cast<Eigen::Index>(i)]);
  return out;
}

std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::Identity:
      return "identity";
    case PriorKind::Dmd:
      return "dmd";
    case PriorKind::Mdmd:
      return "mdmd";
    case PriorKind::ReducedOde:
      return "reduced_ode";
    case PriorKind::ShallowNet:
      return "shallow_net";
  }
  return "unknown";
}

PriorKind prior_kind_from_string(std::string_view tag) {
  for (auto k : {PriorKind::Identity, PriorKind::Dmd, PriorKind::Mdmd, PriorKind::ReducedOde,
                 PriorKind::ShallowNet}) {
    if (to_string(k) == tag) return k;
  }
  throw std::invalid_argument("unknown prior kind '" + std::string(tag) + "'");
}

StateVector PriorOperator::apply(const StateVector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) {
    throw DimensionError("prior '" + std::string(to_string(kind())) + "' expects dimension " +
                         std::to_string(dim()) + ", got " + std::to_string(x.size()));
  }
  return evaluate(x);
}

void IdentityPrior::save(std::ostream& out) const {
  out << to_string(kind()) << '\n' << dim_ << '\n';
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  const std::size_t block = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t first = w * block;
    const std::size_t last = std::min(count, first + block);
    threads.emplace_back([&, first, last] {
      try {
        for (std::size_t i = first; i < last; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace flowmap
