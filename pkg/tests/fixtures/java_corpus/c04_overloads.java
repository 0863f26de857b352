package com.example.over;

public class Over {
    int f;
    void m() {}
    void m(String s, int k) {}
    void m(int a) { m(); }
    static String m(String s, String t, Object... rest) { return s + t; }
}
