package com.example.multi;

public class First {
    void one() {}
}

class Second {
    int v;
    void two() {}
    void three(int a) {}
}

interface Third {
    void abstractOnly();
}
