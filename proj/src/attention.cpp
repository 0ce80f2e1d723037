#include "nrdfer/attention.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace nrdfer {

FrameAttentionProfile attention_rollout(const std::vector<AttentionMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("attention rollout needs at least one layer");
  const std::size_t n = maps.front().tokens;
  if (n < 2) throw std::invalid_argument("attention rollout needs a class token and at least one frame token");
  std::vector<double> rollout;  // n x n, row-major
  for (const auto& map : maps) {
    if (map.tokens != n || map.heads == 0 || map.weights.size() != map.heads * n * n) {
      throw std::invalid_argument("attention maps disagree in token count or size");
    }
    std::vector<double> layer(n * n, 0.0);
    for (std::size_t h = 0; h < map.heads; ++h) {
      for (std::size_t i = 0; i < n * n; ++i) layer[i] += map.weights[h * n * n + i];
    }
    for (auto& v : layer) v /= static_cast<double>(map.heads);
    if (rollout.empty()) {
      rollout = std::move(layer);
      continue;
    }
    std::vector<double> product(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        const double a = layer[i * n + k];
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) product[i * n + j] += a * rollout[k * n + j];
      }
    }
    rollout = std::move(product);
  }
  FrameAttentionProfile profile;
  profile.weights.assign(rollout.begin() + 1, rollout.begin() + static_cast<std::ptrdiff_t>(n));
  double total = 0;
  for (double v : profile.weights) total += v;
  if (!(total > 0)) {
    profile.degenerate = true;
    profile.weights.assign(n - 1, 1.0 / static_cast<double>(n - 1));
  } else {
    for (auto& v : profile.weights) v /= total;
  }
  return profile;
}

std::string attention_csv(const std::vector<FrameAttentionProfile>& profiles) {
  std::ostringstream out;
  out << "clip_id,model_tag,frame,source_frame,weight\n";
  char buf[64];
  for (const auto& p : profiles) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", p.weights[i]);
      out << p.clip_id << ',' << p.model_tag << ',' << i << ',';
      if (i < p.source_frames.size()) out << p.source_frames[i];
      out << ',' << buf << '\n';
    }
  }
  return out.str();
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string attention_svg(const FrameAttentionProfile& profile) {
  constexpr int kPitch = 40, kBar = 28, kPlot = 200, kLeft = 40, kTop = 30, kBottom = 30;
  const int bars = static_cast<int>(profile.weights.size());
  const int width = kLeft + bars * kPitch + 10;
  const int height = kTop + kPlot + kBottom;
  double peak = 0;
  for (double v : profile.weights) peak = std::max(peak, v);
  if (!(peak > 0)) peak = 1;
  std::ostringstream out;
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kLeft << "\" y=\"18\" font-family=\"monospace\" font-size=\"12\">"
      << xml_escape(profile.clip_id + " (" + profile.model_tag + ")") << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + kPlot << "\" x2=\"" << width - 10 << "\" y2=\""
      << kTop + kPlot << "\" stroke=\"black\"/>\n";
  for (int i = 0; i < bars; ++i) {
    const double h = profile.weights[i] / peak * kPlot;
    const double x = kLeft + i * kPitch + (kPitch - kBar) / 2.0;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%d\" height=\"%.2f\" fill=\"steelblue\"><title>%.6f</title></rect>\n",
                  x, kTop + kPlot - h, kBar, h, profile.weights[i]);
    out << buf;
    out << "<text x=\"" << kLeft + i * kPitch + kPitch / 2 << "\" y=\"" << kTop + kPlot + 16
        << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace nrdfer
