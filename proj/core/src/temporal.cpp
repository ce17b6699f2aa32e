#include "vdc/temporal.hpp"

namespace vdc::temporal {

std::string to_string(SamplingMethod m) {
  switch (m) {
    case SamplingMethod::naive:
      return "naive";
    case SamplingMethod::segment:
      return "segment";
    case SamplingMethod::sliding_window:
      return "sliding_window";
  }
  return "?";
}

std::string to_string(Interpolation i) {
  switch (i) {
    case Interpolation::none:
      return "none";
    case Interpolation::duplication:
      return "duplication";
    case Interpolation::linear:
      return "linear";
  }
  return "?";
}

SamplingMethod parse_sampling_method(const std::string& s) {
  if (s == "naive") return SamplingMethod::naive;
  if (s == "segment") return SamplingMethod::segment;
  if (s == "sliding_window" || s == "sliding-window") return SamplingMethod::sliding_window;
  throw PlanError("unknown sampling method '" + s + "'");
}

Interpolation parse_interpolation(const std::string& s) {
  if (s == "none") return Interpolation::none;
  if (s == "duplication") return Interpolation::duplication;
  if (s == "linear") return Interpolation::linear;
  throw PlanError("unknown interpolation '" + s + "'");
}

namespace {

void check_stretch(int source, int target, Interpolation mode) {
  const std::string pair = " (W=" + std::to_string(source) + ", L=" + std::to_string(target) + ")";
  if (source < 1 || target < 1) throw PlanError("window and input lengths must be positive" + pair);
  switch (mode) {
    case Interpolation::none:
      if (source != target) throw PlanError("interpolation 'none' requires W == L" + pair);
      break;
    case Interpolation::duplication:
      if (target % source != 0) throw PlanError("duplication requires L divisible by W" + pair);
      break;
    case Interpolation::linear:
      if (source < 2) throw PlanError("linear interpolation requires W >= 2" + pair);
      if (target < 2) throw PlanError("linear interpolation requires L >= 2" + pair);
      break;
  }
}

}  // namespace

void validate(const SamplingPlan& plan) {
  const int tc = plan.stored_length;
  const int w = plan.window;
  if (tc < 1) throw PlanError("stored length T_c must be >= 1");
  if (plan.input_length < 1) throw PlanError("input length L must be >= 1");
  if (w < 1) throw PlanError("window W must be >= 1");
  if (w > tc) {
    throw PlanError("window W=" + std::to_string(w) + " exceeds stored length T_c=" + std::to_string(tc));
  }
  switch (plan.method) {
    case SamplingMethod::naive:
      if (w != tc) throw PlanError("naive sampling uses the whole video (W must equal T_c)");
      break;
    case SamplingMethod::segment:
      if (tc % w != 0) {
        throw PlanError("segment sampling requires T_c divisible by W (T_c=" + std::to_string(tc) +
                        ", W=" + std::to_string(w) + ")");
      }
      break;
    case SamplingMethod::sliding_window:
      break;
  }
  if (w != plan.input_length) {
    check_stretch(w, plan.input_length, plan.interpolation);
  } else if (plan.interpolation != Interpolation::none) {
    // Identity stretch: any mode degenerates to a copy, accept it.
    check_stretch(w, plan.input_length, plan.interpolation);
  }
}

SamplingPlan make_plan(int stored_length, int input_length, Interpolation when_short) {
  SamplingPlan plan;
  plan.stored_length = stored_length;
  plan.input_length = input_length;
  if (stored_length >= input_length) {
    plan.method = stored_length == input_length ? SamplingMethod::naive : SamplingMethod::sliding_window;
    plan.window = input_length;
    plan.interpolation = Interpolation::none;
  } else {
    plan.method = SamplingMethod::naive;
    plan.window = stored_length;
    plan.interpolation = when_short;
    if (when_short == Interpolation::duplication && input_length % stored_length != 0) {
      plan.interpolation = Interpolation::linear;
    }
  }
  validate(plan);
  return plan;
}

Window sample_window(const SamplingPlan& plan, Rng& rng) {
  validate(plan);
  switch (plan.method) {
    case SamplingMethod::naive:
      return {0, plan.stored_length};
    case SamplingMethod::segment: {
      const int segments = plan.stored_length / plan.window;
      return {rng.uniform_int(0, segments - 1) * plan.window, plan.window};
    }
    case SamplingMethod::sliding_window:
      return {rng.uniform_int(0, plan.stored_length - plan.window), plan.window};
  }
  return {0, plan.window};
}

std::vector<Window> admissible_windows(const SamplingPlan& plan) {
  validate(plan);
  std::vector<Window> out;
  switch (plan.method) {
    case SamplingMethod::naive:
      out.push_back({0, plan.stored_length});
      break;
    case SamplingMethod::segment:
      for (int s = 0; s + plan.window <= plan.stored_length; s += plan.window) out.push_back({s, plan.window});
      break;
    case SamplingMethod::sliding_window:
      for (int s = 0; s + plan.window <= plan.stored_length; ++s) out.push_back({s, plan.window});
      break;
  }
  return out;
}

Window center_window(const SamplingPlan& plan) {
  const auto all = admissible_windows(plan);
  return all[(all.size() - 1) / 2];
}

std::vector<InterpTap> interpolation_taps(int source_length, int target_length, Interpolation mode) {
  check_stretch(source_length, target_length, mode);
  std::vector<InterpTap> taps(static_cast<std::size_t>(target_length));
  for (int i = 0; i < target_length; ++i) {
    InterpTap& tap = taps[static_cast<std::size_t>(i)];
    switch (mode) {
      case Interpolation::none:
        tap = {i, i, 1.0, 0.0};
        break;
      case Interpolation::duplication: {
        const int src = i / (target_length / source_length);
        tap = {src, src, 1.0, 0.0};
        break;
      }
      case Interpolation::linear: {
        // p = i (W-1) / (L-1), split into integer and fractional parts exactly.
        const long num = static_cast<long>(i) * (source_length - 1);
        const long den = target_length - 1;
        const int lo = static_cast<int>(num / den);
        const long rem = num % den;
        if (rem == 0) {
          tap = {lo, lo, 1.0, 0.0};
        } else {
          const double frac = static_cast<double>(rem) / static_cast<double>(den);
          tap = {lo, lo + 1, 1.0 - frac, frac};
        }
        break;
      }
    }
  }
  return taps;
}

CompressionReport compression_report(double num_videos, double num_condensed, double mean_frames,
                                     double condensed_frames) {
  if (!(num_videos > 0) || !(num_condensed > 0) || !(mean_frames > 0) || !(condensed_frames > 0)) {
    throw DomainError("compression_report requires positive N, N_c, T_m, T_c");
  }
  CompressionReport r;
  r.instance_ratio = num_condensed / num_videos;
  r.temporal_ratio = condensed_frames / mean_frames;
  r.total_ratio = (num_condensed * condensed_frames) / (num_videos * mean_frames);
  return r;
}

}  // namespace vdc::temporal
