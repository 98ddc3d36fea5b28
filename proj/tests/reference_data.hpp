#pragma once

#include <string>
#include <vector>

#include "fruitnet/metrics.hpp"

namespace fruitnet::testing {

inline const std::vector<std::string> kBananas = {"Elakki",     "Hill Banana", "Nendram",
                                                  "Other Fruits", "Red Banana", "Robusta"};

// Published sub-variety test confusion matrix (rows true, columns predicted).
inline ConfusionMatrix sub_variety_matrix() {
  ConfusionMatrix m(6, 6);
  m << 10, 4, 0, 0, 1, 0,  //
      0, 4, 0, 0, 0, 1,    //
      1, 1, 10, 0, 0, 1,   //
      0, 0, 0, 22, 0, 0,   //
      1, 0, 0, 0, 46, 0,   //
      0, 0, 0, 0, 0, 49;
  return m;
}

// Its published report: precision, recall, f1 in whole percent; support.
inline constexpr std::int64_t kSubVarietyReport[6][4] = {{83, 67, 74, 15},   {44, 80, 57, 5},  {100, 77, 87, 13},
                                                         {100, 100, 100, 22}, {98, 98, 98, 47}, {96, 100, 98, 49}};

// Published quality test confusion matrix (good, bad).
inline ConfusionMatrix quality_matrix() {
  ConfusionMatrix m(2, 2);
  m << 5, 0, 0, 10;
  return m;
}

// MobileNet v1 body table: input size of every conv row, in order, with the
// five 14x14x512 separable blocks expanded.
inline const char* const kConvInputs[] = {
    "224 × 224 × 3",                                  // conv1
    "112 × 112 × 32",  "112 × 112 × 32",              // dw1, pw1
    "112 × 112 × 64",  "56 × 56 × 64",                // dw2, pw2
    "56 × 56 × 128",   "56 × 56 × 128",               // dw3, pw3
    "56 × 56 × 128",   "28 × 28 × 128",               // dw4, pw4
    "28 × 28 × 256",   "28 × 28 × 256",               // dw5, pw5
    "28 × 28 × 256",   "14 × 14 × 256",               // dw6, pw6
    "14 × 14 × 512",   "14 × 14 × 512",  "14 × 14 × 512", "14 × 14 × 512",
    "14 × 14 × 512",   "14 × 14 × 512",  "14 × 14 × 512", "14 × 14 × 512",
    "14 × 14 × 512",   "14 × 14 × 512",               // 5 x (dw, pw)
    "14 × 14 × 512",   "7 × 7 × 512",                 // dw12, pw12
    "7 × 7 × 1024",    "7 × 7 × 1024",                // dw13, pw13
};

inline const char* const kConvTypes[] = {
    "Conv / s2",    "Conv dw / s1", "Conv / s1", "Conv dw / s2", "Conv / s1", "Conv dw / s1",
    "Conv / s1",    "Conv dw / s2", "Conv / s1", "Conv dw / s1", "Conv / s1", "Conv dw / s2",
    "Conv / s1",    "Conv dw / s1", "Conv / s1", "Conv dw / s1", "Conv / s1", "Conv dw / s1",
    "Conv / s1",    "Conv dw / s1", "Conv / s1", "Conv dw / s1", "Conv / s1", "Conv dw / s2",
    "Conv / s1",    "Conv dw / s1", "Conv / s1",
};

}  // namespace fruitnet::testing
