#include "themegen/vocab.hpp"

#include <charconv>

#include "themegen/errors.hpp"

namespace themegen {
namespace {

constexpr int kPitchCount = kMaxPitch - kMinPitch + 1;        // 127
constexpr int kDurationCount = kMaxDuration - kMinDuration + 1;  // 64
constexpr int kVelocityCount = kMaxVelocity - kMinVelocity + 1;  // 126

int checked(int value, int lo, int hi, const char* what) {
  if (value < lo || value > hi) {
    throw DataError(std::string(what) + " out of range: " + std::to_string(value) + " not in [" +
                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return value;
}

}  // namespace

Vocabulary::Vocabulary() {
  int next = 0;
  melody_pitch_base_ = next;
  next += kPitchCount;
  accomp_pitch_base_ = next;
  next += kPitchCount;
  melody_duration_base_ = next;
  next += kDurationCount;
  accomp_duration_base_ = next;
  next += kDurationCount;
  melody_velocity_base_ = next;
  next += kVelocityCount;
  accomp_velocity_base_ = next;
  next += kVelocityCount;
  tempo_base_ = next;
  next += kTempoBins;
  bar_ = next++;
  subbeat_base_ = next;
  next += kSubbeatsPerBar;
  theme_start_ = next++;
  theme_end_ = next++;
  padding_ = next;  // == size() - 1
}

int Vocabulary::note_pitch(Track t, int pitch) const {
  checked(pitch, kMinPitch, kMaxPitch, "pitch");
  return (t == Track::Melody ? melody_pitch_base_ : accomp_pitch_base_) + (pitch - kMinPitch);
}

int Vocabulary::note_duration(Track t, int duration) const {
  checked(duration, kMinDuration, kMaxDuration, "duration");
  return (t == Track::Melody ? melody_duration_base_ : accomp_duration_base_) +
         (duration - kMinDuration);
}

int Vocabulary::note_velocity(Track t, int velocity) const {
  checked(velocity, kMinVelocity, kMaxVelocity, "velocity");
  return (t == Track::Melody ? melody_velocity_base_ : accomp_velocity_base_) +
         (velocity - kMinVelocity);
}

int Vocabulary::tempo_bin_of(int bpm) {
  checked(bpm, kTempoMin, kTempoMax, "bpm");
  return (bpm - kTempoMin) / kTempoStep;
}

int Vocabulary::bpm_of_bin(int bin) {
  checked(bin, 0, kTempoBins - 1, "tempo bin");
  return kTempoMin + kTempoStep * bin;
}

int Vocabulary::tempo_token(int bpm) const { return tempo_base_ + tempo_bin_of(bpm); }

int Vocabulary::tempo_token_for_bin(int bin) const {
  checked(bin, 0, kTempoBins - 1, "tempo bin");
  return tempo_base_ + bin;
}

int Vocabulary::subbeat(int position) const {
  checked(position, 0, kSubbeatsPerBar - 1, "subbeat");
  return subbeat_base_ + position;
}

TokenInfo Vocabulary::info(int id) const {
  checked(id, 0, size() - 1, "token id");
  if (id < accomp_pitch_base_)
    return {TokenType::NotePitch, Track::Melody, id - melody_pitch_base_ + kMinPitch};
  if (id < melody_duration_base_)
    return {TokenType::NotePitch, Track::Accompaniment, id - accomp_pitch_base_ + kMinPitch};
  if (id < accomp_duration_base_)
    return {TokenType::NoteDuration, Track::Melody, id - melody_duration_base_ + kMinDuration};
  if (id < melody_velocity_base_)
    return {TokenType::NoteDuration, Track::Accompaniment,
            id - accomp_duration_base_ + kMinDuration};
  if (id < accomp_velocity_base_)
    return {TokenType::NoteVelocity, Track::Melody, id - melody_velocity_base_ + kMinVelocity};
  if (id < tempo_base_)
    return {TokenType::NoteVelocity, Track::Accompaniment,
            id - accomp_velocity_base_ + kMinVelocity};
  if (id < bar_) return {TokenType::Tempo, Track::Melody, bpm_of_bin(id - tempo_base_)};
  if (id == bar_) return {TokenType::Bar, Track::Melody, 0};
  if (id < theme_start_) return {TokenType::Subbeat, Track::Melody, id - subbeat_base_};
  if (id == theme_start_) return {TokenType::ThemeStart, Track::Melody, 0};
  if (id == theme_end_) return {TokenType::ThemeEnd, Track::Melody, 0};
  return {TokenType::Padding, Track::Melody, 0};
}

std::string Vocabulary::name(int id) const {
  TokenInfo i = info(id);
  switch (i.type) {
    case TokenType::NotePitch:
      return std::string("Note-Pitch:") + track_name(i.track) + ":" + std::to_string(i.value);
    case TokenType::NoteDuration:
      return std::string("Note-Duration:") + track_name(i.track) + ":" + std::to_string(i.value);
    case TokenType::NoteVelocity:
      return std::string("Note-Velocity:") + track_name(i.track) + ":" + std::to_string(i.value);
    case TokenType::Tempo:
      return "Tempo:" + std::to_string(i.value);
    case TokenType::Bar:
      return "Bar";
    case TokenType::Subbeat:
      return "Subbeat:" + std::to_string(i.value);
    case TokenType::ThemeStart:
      return "Theme-Start";
    case TokenType::ThemeEnd:
      return "Theme-End";
    case TokenType::Padding:
      return "Padding";
  }
  throw Error("unreachable token type");
}

std::optional<int> Vocabulary::id_of(const std::string& name) const {
  if (name == "Bar") return bar_;
  if (name == "Theme-Start") return theme_start_;
  if (name == "Theme-End") return theme_end_;
  if (name == "Padding") return padding_;

  auto parse_int = [](const std::string& s, int& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
  };

  auto split = [&](const std::string& prefix) -> std::optional<std::pair<Track, int>> {
    if (name.rfind(prefix, 0) != 0) return std::nullopt;
    std::string rest = name.substr(prefix.size());
    Track t;
    if (rest.rfind("Melody:", 0) == 0) {
      t = Track::Melody;
      rest = rest.substr(7);
    } else if (rest.rfind("Accompaniment:", 0) == 0) {
      t = Track::Accompaniment;
      rest = rest.substr(14);
    } else {
      return std::nullopt;
    }
    int v;
    if (!parse_int(rest, v)) return std::nullopt;
    return std::pair(t, v);
  };

  try {
    if (auto pv = split("Note-Pitch:")) return note_pitch(pv->first, pv->second);
    if (auto pv = split("Note-Duration:")) return note_duration(pv->first, pv->second);
    if (auto pv = split("Note-Velocity:")) return note_velocity(pv->first, pv->second);
    int v;
    if (name.rfind("Tempo:", 0) == 0) {
      std::string rest = name.substr(6);
      if (std::from_chars(rest.data(), rest.data() + rest.size(), v).ec == std::errc{})
        return tempo_token(v);
    }
    if (name.rfind("Subbeat:", 0) == 0) {
      std::string rest = name.substr(8);
      if (std::from_chars(rest.data(), rest.data() + rest.size(), v).ec == std::errc{})
        return subbeat(v);
    }
  } catch (const DataError&) {
    return std::nullopt;
  }
  return std::nullopt;
}

int MelodyVocabulary::pitch(int p) const {
  checked(p, kMinPitch, kMaxPitch, "melody pitch");
  return p - kMinPitch;
}

int MelodyVocabulary::duration(int d) const {
  checked(d, kMinDuration, kMaxDuration, "melody duration");
  return kRest + 1 + (d - kMinDuration);
}

std::string MelodyVocabulary::name(int id) const {
  checked(id, 0, kPadding, "melody token id");
  if (id < kRest) return "Pitch:" + std::to_string(id + kMinPitch);
  if (id == kRest) return "Rest";
  if (id < kPadding) return "Duration:" + std::to_string(id - kRest);
  return "Padding";
}

}  // namespace themegen
